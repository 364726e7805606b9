//! WAV input/output and polyphase resampling.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Zero crossings of the windowed-sinc prototype on each side, measured at the
/// slower of the two rates.
const RESAMPLE_HALF_ZEROS: usize = 16;
/// Fraction of the output Nyquist band kept by the anti-aliasing filter.
const RESAMPLE_ROLLOFF: f64 = 0.94;

fn audio_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a PCM WAV file (16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono. Returns the samples and the file's sample rate.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(audio_err(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
        }
        (format, bits) => {
            return Err(audio_err(
                path,
                format!("unsupported sample format {format:?} with {bits} bits"),
            ))
        }
    }
    .map_err(|e| audio_err(path, e.to_string()))?;
    if interleaved.len() % channels != 0 {
        return Err(audio_err(path, "truncated final frame"));
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok((mono, spec.sample_rate))
}

/// Loads a clip as a mono waveform at `target_rate`, resampling when needed.
pub fn load_clip(path: &Path, target_rate: u32) -> Result<Waveform> {
    let (samples, rate) = read_wav_mono(path)?;
    if samples.is_empty() {
        return Err(audio_err(path, "no samples"));
    }
    let samples = if rate == target_rate {
        samples
    } else {
        resample(&samples, rate, target_rate)?
            .into_iter()
            .map(|s| s.clamp(-1.0, 1.0))
            .collect()
    };
    Waveform::new(samples, target_rate).map_err(|e| audio_err(path, e.to_string()))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| audio_err(path, e.to_string()))?;
    for &s in wave.iter() {
        writer
            .write_sample(s as f32)
            .map_err(|e| audio_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| audio_err(path, e.to_string()))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational-ratio polyphase resampler with a Blackman-windowed sinc
/// anti-aliasing filter. Output length is `ceil(len * to / from)`.
pub fn resample(input: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    if from_rate == to_rate || input.is_empty() {
        return Ok(input.to_vec());
    }
    let g = gcd(from_rate as u64, to_rate as u64);
    let up = (to_rate as u64 / g) as usize;
    let down = (from_rate as u64 / g) as usize;
    let factor = up.max(down);

    // Prototype lowpass at the upsampled rate.
    let cutoff = RESAMPLE_ROLLOFF * 0.5 / factor as f64;
    let half = RESAMPLE_HALF_ZEROS * factor;
    let taps = 2 * half + 1;
    let filter: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - half as f64;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let phase = 2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64;
            let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            up as f64 * sinc * window
        })
        .collect();

    let out_len = (input.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        // Position in the upsampled stream, shifted so the filter is centred.
        let centre = (m * down + half) as isize;
        let first = (centre - (taps as isize - 1)).max(0);
        let lo = (first as usize).div_ceil(up);
        let hi = ((centre as usize) / up).min(input.len() - 1);
        let mut acc = 0.0;
        if lo <= hi {
            for (i, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                acc += x * filter[centre as usize - i * up];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_rate_length() {
        for n in [1usize, 2, 99, 100, 1001] {
            let x = vec![0.1; n];
            let y = resample(&x, 16000, 8000).unwrap();
            assert!((y.len() as i64 - n.div_ceil(2) as i64).abs() <= 1);
        }
    }

    #[test]
    fn dc_gain_is_unity_in_the_interior() {
        let x = vec![0.5; 4000];
        for (from, to) in [(16000, 8000), (44100, 8000), (8000, 16000), (22050, 8000)] {
            let y = resample(&x, from, to).unwrap();
            let mid = y.len() / 2;
            assert!((y[mid] - 0.5).abs() < 1e-3, "{from}->{to}: {}", y[mid]);
        }
    }

    #[test]
    fn removes_content_above_new_nyquist() {
        // 6 kHz tone at 16 kHz cannot survive at 8 kHz.
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 6000.0 * n as f64 / 16000.0).sin())
            .collect();
        let y = resample(&x, 16000, 8000).unwrap();
        let interior = &y[500..y.len() - 500];
        let rms = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn wav_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.25, -0.5, 0.1, 1.0], 8000).unwrap();
        write_wav(&path, &w).unwrap();
        let back = load_clip(&path, 8000).unwrap();
        assert_eq!(back, w.to_f32_precision());
    }

    #[test]
    fn int16_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(16384i16, 0i16), (-32768, -32768)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_clip(&path, 8000).unwrap();
        assert_eq!(clip.samples(), &[0.25, -1.0]);
    }

    #[test]
    fn unreadable_file_is_an_audio_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav file").unwrap();
        assert!(matches!(load_clip(&path, 8000), Err(Error::Audio { .. })));
    }
}
