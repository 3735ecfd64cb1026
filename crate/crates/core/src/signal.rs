//! Deterministic speech-like test signal.
//!
//! Syllables of glottal-pulse excitation shaped by gliding formant
//! resonators, interleaved with fricative noise bursts and pauses. The
//! result has the non-stationary, short-time-correlated structure that
//! delayed linear prediction relies on, without shipping recorded speech.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two-pole resonator with per-sample retuning.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64, freq: f64, bandwidth: f64, fs: f64) -> f64 {
        let r = (-PI * bandwidth / fs).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        let a2 = -r * r;
        let y = (1.0 - r) * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Raised-cosine attack and release of `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i + ramp >= len {
        let j = len - 1 - i;
        0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Generates `duration_s` seconds of speech-like audio at `sample_rate`,
/// peak-normalized to 0.5.
pub fn speech_like(duration_s: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let total = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; total];

    let mut t = (0.05 * fs) as usize;
    while t < total {
        let dur = (rng.random_range(0.12..0.35) * fs) as usize;
        let end = (t + dur).min(total);
        let amp = rng.random_range(0.3..1.0);
        if rng.random::<f64>() < 0.75 {
            voiced(&mut out[t..end], &mut rng, fs, amp);
        } else {
            fricative(&mut out[t..end], &mut rng, fs, amp);
        }
        let pause = (rng.random_range(0.04..0.2) * fs) as usize;
        t = end + pause;
    }

    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    out
}

fn voiced(out: &mut [f64], rng: &mut ChaCha8Rng, fs: f64, amp: f64) {
    let len = out.len();
    let f0_start = rng.random_range(90.0..220.0);
    let f0_end = f0_start * rng.random_range(0.8..1.2);
    let f_start = [
        rng.random_range(300.0..800.0),
        rng.random_range(900.0..2300.0),
        rng.random_range(2400.0..3200.0),
    ];
    let f_end = [
        rng.random_range(300.0..800.0),
        rng.random_range(900.0..2300.0),
        rng.random_range(2400.0..3200.0),
    ];
    let bw = [
        rng.random_range(60.0..120.0),
        rng.random_range(80.0..160.0),
        rng.random_range(120.0..220.0),
    ];
    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut phase = 0.0f64;
    let ramp = (0.02 * fs) as usize;
    for (i, y) in out.iter_mut().enumerate() {
        let frac = i as f64 / len.max(1) as f64;
        let f0 = lerp(f0_start, f0_end, frac);
        phase += f0 / fs;
        // Band-limited pulse: sum of harmonics with a -6 dB/oct tilt.
        let n_harm = ((0.45 * fs) / f0).floor() as usize;
        let mut excitation = 0.0;
        for h in 1..=n_harm.min(40) {
            excitation += (2.0 * PI * h as f64 * phase).cos() / h as f64;
        }
        excitation += 0.02 * rng.sample::<f64, _>(StandardNormal);
        let mut s = 0.0;
        for (j, r) in res.iter_mut().enumerate() {
            let f = lerp(f_start[j], f_end[j], frac);
            s += r.step(excitation, f, bw[j], fs) / (j + 1) as f64;
        }
        *y += amp * envelope(i, len, ramp) * s;
    }
}

fn fricative(out: &mut [f64], rng: &mut ChaCha8Rng, fs: f64, amp: f64) {
    let len = out.len();
    let centre = rng.random_range(2500.0..6000.0f64).min(0.4 * fs);
    let bandwidth = rng.random_range(800.0..2000.0);
    let mut res = Resonator::new();
    let ramp = (0.01 * fs) as usize;
    for (i, y) in out.iter_mut().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        *y += 0.6 * amp * envelope(i, len, ramp) * res.step(noise, centre, bandwidth, fs);
    }
}
