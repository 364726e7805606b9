//! Corpus-free sound classes: each class owns a carrier band and an envelope
//! family, so classes are spectrally distinct while clips within a class vary
//! with the seed.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::signal::Waveform;

const BANK_LOW_HZ: f64 = 150.0;
const BANK_HIGH_FRACTION_OF_NYQUIST: f64 = 0.95;
const BAND_GUARD: f64 = 0.18;
const EDGE_FADE_S: f64 = 0.005;
const CLIP_TAG: u64 = 0xc11b;
const NOISE_TAG: u64 = 0xb6;

/// Bank of synthetic sound classes sharing one sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthBank {
    pub num_classes: usize,
    pub sample_rate: u32,
}

#[derive(Clone, Copy, Debug)]
enum Envelope {
    /// Trains of decaying impacts.
    Impacts,
    /// On/off gated ringing.
    Gated,
    /// One slow swell with tremolo.
    Swell,
}

impl SynthBank {
    pub fn new(num_classes: usize, sample_rate: u32) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("synthetic bank needs at least one class".into()));
        }
        if sample_rate < 2000 {
            return Err(Error::Config(format!(
                "synthetic bank needs a sample rate of at least 2 kHz, got {sample_rate}"
            )));
        }
        Ok(Self {
            num_classes,
            sample_rate,
        })
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|k| {
                let (lo, hi) = self.band(k);
                format!("synth{k}_{:.0}-{:.0}hz", lo, hi)
            })
            .collect()
    }

    /// Carrier band `(low, high)` in Hz for `class`.
    pub fn band(&self, class: usize) -> (f64, f64) {
        let high = BANK_HIGH_FRACTION_OF_NYQUIST * self.sample_rate as f64 / 2.0;
        let width = (high - BANK_LOW_HZ) / self.num_classes as f64;
        let lo = BANK_LOW_HZ + class as f64 * width;
        (lo + BAND_GUARD * width, lo + (1.0 - BAND_GUARD) * width)
    }

    fn envelope_family(class: usize) -> Envelope {
        match class % 3 {
            0 => Envelope::Impacts,
            1 => Envelope::Gated,
            _ => Envelope::Swell,
        }
    }

    /// Renders one clip of `class_index`, `duration_s` long, deterministic in `seed`.
    pub fn clip(&self, class_index: usize, duration_s: f64, seed: u64) -> Result<Waveform> {
        if class_index >= self.num_classes {
            return Err(Error::invalid(format!(
                "synthetic class {class_index} outside bank of {} classes",
                self.num_classes
            )));
        }
        let sr = self.sample_rate as f64;
        let len = (duration_s * sr).round() as usize;
        if len == 0 {
            return Err(Error::invalid("clip duration rounds to zero samples"));
        }
        let mut rng = derive_rng(seed, &[CLIP_TAG, class_index as u64]);
        let (lo, hi) = self.band(class_index);

        let mut tone = vec![0.0; len];
        let partials = rng.random_range(2..=4);
        for _ in 0..partials {
            let f = rng.random_range(lo..hi);
            let amp = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            // slow drift inside the band keeps clips from being pure tones
            let drift = rng.random_range(-0.05..0.05) * (hi - lo);
            for (n, v) in tone.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let frac = n as f64 / len as f64;
                let inst = (f + drift * frac).clamp(lo, hi);
                *v += amp * (2.0 * PI * inst * t + phase).sin();
            }
        }
        let noise = bandpass_noise(&mut rng, len, sr, lo, hi);
        let tone_rms = rms(&tone).max(1e-12);
        let noise_rms = rms(&noise).max(1e-12);
        let mut clip: Vec<f64> = tone
            .iter()
            .zip(&noise)
            .map(|(t, n)| t / tone_rms + 0.3 * n / noise_rms)
            .collect();

        let env = envelope(&mut rng, Self::envelope_family(class_index), len, sr);
        let fade = ((EDGE_FADE_S * sr) as usize).min(len / 2).max(1);
        for (n, (v, e)) in clip.iter_mut().zip(&env).enumerate() {
            let edge = (n.min(len - 1 - n) as f64 / fade as f64).min(1.0);
            *v *= e * edge;
        }
        let peak = clip.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            clip.iter_mut().for_each(|v| *v *= 0.9 / peak);
        }
        Waveform::new(clip, self.sample_rate)
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// White noise through a two-pole resonator centred on the band.
fn bandpass_noise(rng: &mut impl Rng, len: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let centre = 0.5 * (lo + hi);
    let bandwidth = hi - lo;
    let r = (-PI * bandwidth / sr).exp();
    let theta = 2.0 * PI * centre / sr;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            let y = (1.0 - r) * w + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn envelope(rng: &mut impl Rng, family: Envelope, len: usize, sr: f64) -> Vec<f64> {
    let mut env = vec![0.0; len];
    match family {
        Envelope::Impacts => {
            let mut start = 0usize;
            while start < len {
                let tau = rng.random_range(0.02..0.06) * sr;
                let gain = rng.random_range(0.6..1.0);
                for (k, e) in env.iter_mut().skip(start).enumerate() {
                    let v = gain * (-(k as f64) / tau).exp();
                    if v < 1e-4 {
                        break;
                    }
                    *e += v;
                }
                start += (rng.random_range(0.12..0.35) * sr) as usize;
            }
        }
        Envelope::Gated => {
            let period = rng.random_range(0.15..0.4) * sr;
            let duty = rng.random_range(0.5..0.7);
            let ramp = 0.005 * sr;
            for (n, e) in env.iter_mut().enumerate() {
                let pos = (n as f64) % period;
                let on = duty * period;
                *e = if pos < on {
                    let edge = pos.min(on - pos) / ramp;
                    0.5 - 0.5 * (PI * edge.min(1.0)).cos()
                } else {
                    0.0
                };
            }
        }
        Envelope::Swell => {
            let peak = rng.random_range(0.1..0.3) * len as f64;
            let rate = rng.random_range(3.0..8.0);
            let depth = rng.random_range(0.2..0.4);
            for (n, e) in env.iter_mut().enumerate() {
                let x = n as f64;
                let shape = if x < peak {
                    x / peak
                } else {
                    (-(x - peak) / (0.5 * len as f64)).exp()
                };
                let trem = 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * rate * x / sr).sin());
                *e = shape * trem;
            }
        }
    }
    env
}

/// Stationary background noise, white Gaussian smoothed by a gentle one-pole
/// lowpass, deterministic in `seed`.
pub fn background_noise(len: usize, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = derive_rng(seed, &[NOISE_TAG]);
    let mut prev = 0.0;
    let samples = (0..len.max(1))
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            prev = 0.3 * prev + w;
            prev
        })
        .collect();
    Waveform::from_trusted(samples, sample_rate)
}
