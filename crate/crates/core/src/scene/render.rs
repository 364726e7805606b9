use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::synth::background_noise;
use super::{
    seconds_to_samples, BackgroundSource, BackgroundSpec, ClassPolicy, ClipSource, CorpusIndex,
    EventSpec, SceneConfig, SceneSpec, SCENE_SPEC_VERSION,
};
use crate::audio::load_clip;
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::signal::{StemSet, Waveform};

const SPEC_TAG: u64 = 0x5ce7e;

/// Draws a scene description: the class count from the policy, that many
/// distinct classes, clips of random duration at random onsets, and a
/// uniform per-event SNR.
pub fn sample_scene_spec(corpus: &CorpusIndex, config: &SceneConfig, seed: u64) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = derive_rng(seed, &[SPEC_TAG, config.split.stream()]);
    let sr = config.sample_rate;
    let scene_len = seconds_to_samples(config.duration_s, sr);
    let min_len = seconds_to_samples(config.min_clip_s, sr).max(1);
    let max_len = seconds_to_samples(config.max_clip_s, sr).max(min_len);

    let k = match &config.class_policy {
        ClassPolicy::Fixed(k) => *k,
        ClassPolicy::UniformOver(ks) => ks[rng.random_range(0..ks.len())],
    };
    let eligible: Vec<usize> = (0..corpus.num_classes())
        .filter(|&c| corpus.class_available(c, config.split, config.min_clip_s))
        .collect();
    if eligible.len() < k {
        return Err(Error::Config(format!(
            "scene needs {k} distinct classes but the corpus offers {} in the {} split",
            eligible.len(),
            config.split.as_str()
        )));
    }
    let mut classes: Vec<usize> = sample_indices(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    classes.sort_unstable();

    // every chosen class appears once; the remaining events go to classes
    // that are still below the per-class cap
    let mut counts = vec![1usize; k];
    let mut event_classes = classes.clone();
    for _ in k..config.events_per_scene {
        let open: Vec<usize> = (0..k)
            .filter(|&i| counts[i] < config.max_events_per_class)
            .collect();
        let pick = open[rng.random_range(0..open.len())];
        counts[pick] += 1;
        event_classes.push(classes[pick]);
    }

    let mut events = Vec::with_capacity(event_classes.len());
    for class_index in event_classes {
        let mut len = rng.random_range(min_len..=max_len).min(scene_len);
        let (clip, offset) = match corpus.usable_clips(class_index, config.split, config.min_clip_s) {
            None => (ClipSource::Synthetic { seed: rng.random() }, 0),
            Some(clips) => {
                let desc = clips[rng.random_range(0..clips.len())];
                let available = (desc.duration_s * sr as f64).floor() as usize;
                len = len.min(available);
                let offset = rng.random_range(0..=available - len);
                (
                    ClipSource::File {
                        path: desc.path.clone(),
                    },
                    offset,
                )
            }
        };
        let onset = rng.random_range(0..=scene_len - len);
        let snr_db = if config.snr_db_max > config.snr_db_min {
            rng.random_range(config.snr_db_min..config.snr_db_max)
        } else {
            config.snr_db_min
        };
        events.push(EventSpec {
            class_index,
            clip,
            clip_offset_s: offset as f64 / sr as f64,
            clip_duration_s: len as f64 / sr as f64,
            onset_s: onset as f64 / sr as f64,
            snr_db,
        });
    }

    let background = sample_background(corpus, config, scene_len, &mut rng)?;
    Ok(SceneSpec {
        scene_spec_version: SCENE_SPEC_VERSION,
        seed,
        duration_s: scene_len as f64 / sr as f64,
        sample_rate: sr,
        num_classes: corpus.num_classes(),
        background,
        events,
    })
}

fn sample_background(
    corpus: &CorpusIndex,
    config: &SceneConfig,
    scene_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BackgroundSpec> {
    let source = match corpus {
        CorpusIndex::Files(files) => {
            let pool: Vec<_> = files
                .backgrounds
                .iter()
                .filter(|b| b.split == config.split)
                .collect();
            if pool.is_empty() {
                BackgroundSource::SyntheticNoise { seed: rng.random() }
            } else {
                let desc = pool[rng.random_range(0..pool.len())];
                let available = (desc.duration_s * config.sample_rate as f64).floor() as usize;
                let offset = if available > scene_len {
                    rng.random_range(0..=available - scene_len)
                } else {
                    0
                };
                BackgroundSource::File {
                    path: desc.path.clone(),
                    offset_s: offset as f64 / config.sample_rate as f64,
                }
            }
        }
        CorpusIndex::Synthetic(_) => BackgroundSource::SyntheticNoise { seed: rng.random() },
    };
    Ok(BackgroundSpec {
        source,
        ref_db: config.ref_db,
    })
}

/// One event after scaling, as placed in the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedEvent {
    pub class_index: usize,
    /// First sample of the event's support.
    pub onset: usize,
    pub signal: Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub mixture: Waveform,
    pub stems: StemSet,
    pub background: Waveform,
    pub events: Vec<PlacedEvent>,
    pub spec: SceneSpec,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Renders a scene additively: background at `ref_db` dBFS RMS, each event
/// normalised to unit RMS and then scaled to its SNR against the background
/// over the event's own support.
pub fn render_scene(spec: &SceneSpec, corpus: &CorpusIndex) -> Result<RenderedScene> {
    if spec.scene_spec_version != SCENE_SPEC_VERSION {
        return Err(Error::Config(format!(
            "scene spec version {} is not supported (expected {SCENE_SPEC_VERSION})",
            spec.scene_spec_version
        )));
    }
    let sr = spec.sample_rate;
    let len = spec.num_samples();
    if len == 0 {
        return Err(Error::Config("scene has zero length".into()));
    }

    let mut background = match &spec.background.source {
        BackgroundSource::SyntheticNoise { seed } => background_noise(len, sr, *seed).into_samples(),
        BackgroundSource::File { path, offset_s } => {
            let clip = load_clip(path, sr)?;
            let offset = seconds_to_samples(*offset_s, sr);
            // loop short backgrounds to cover the scene
            (0..len).map(|n| clip[(offset + n) % clip.len()]).collect()
        }
    };
    let bg_rms = rms(&background);
    if bg_rms == 0.0 {
        return Err(Error::Config("background is silent".into()));
    }
    let bg_gain = 10f64.powf(spec.background.ref_db / 20.0) / bg_rms;
    background.iter_mut().for_each(|v| *v *= bg_gain);

    let mut stems = vec![vec![0.0; len]; spec.num_classes];
    let mut events = Vec::with_capacity(spec.events.len());
    for (i, ev) in spec.events.iter().enumerate() {
        if ev.class_index >= spec.num_classes {
            return Err(Error::invalid(format!(
                "event {i} has class {} but the scene has {} classes",
                ev.class_index, spec.num_classes
            )));
        }
        let onset = seconds_to_samples(ev.onset_s, sr);
        let ev_len = seconds_to_samples(ev.clip_duration_s, sr);
        if ev_len == 0 || onset + ev_len > len {
            return Err(Error::invalid(format!(
                "event {i} spans samples [{onset}, {}) outside the {len}-sample scene",
                onset + ev_len
            )));
        }
        let raw = load_event_clip(ev, corpus, sr, ev_len)?;
        let clip_rms = rms(&raw);
        if clip_rms == 0.0 {
            return Err(Error::invalid(format!("event {i} clip is silent")));
        }
        let target_rms = rms(&background[onset..onset + ev_len]) * 10f64.powf(ev.snr_db / 20.0);
        let gain = target_rms / clip_rms;
        let signal: Vec<f64> = raw.iter().map(|v| v * gain).collect();
        for (acc, v) in stems[ev.class_index][onset..onset + ev_len].iter_mut().zip(&signal) {
            *acc += v;
        }
        events.push(PlacedEvent {
            class_index: ev.class_index,
            onset,
            signal: Waveform::new(signal, sr)?,
        });
    }

    let mut mixture = background.clone();
    for stem in &stems {
        for (m, s) in mixture.iter_mut().zip(stem) {
            *m += s;
        }
    }

    let peak = mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let g = 1.0 / peak;
        for buf in std::iter::once(&mut mixture)
            .chain(std::iter::once(&mut background))
            .chain(stems.iter_mut())
        {
            buf.iter_mut().for_each(|v| *v *= g);
        }
        for ev in &mut events {
            ev.signal = ev.signal.scaled(g)?;
        }
    }

    let stems = StemSet::new(
        stems
            .into_iter()
            .map(|s| Waveform::new(s, sr))
            .collect::<Result<Vec<_>>>()?,
    )?;
    Ok(RenderedScene {
        mixture: Waveform::new(mixture, sr)?,
        stems,
        background: Waveform::new(background, sr)?,
        events,
        spec: spec.clone(),
    })
}

fn load_event_clip(ev: &EventSpec, corpus: &CorpusIndex, sr: u32, len: usize) -> Result<Vec<f64>> {
    match (&ev.clip, corpus) {
        (ClipSource::Synthetic { seed }, CorpusIndex::Synthetic(bank)) => {
            if bank.sample_rate != sr {
                return Err(Error::Config(format!(
                    "synthetic bank runs at {} Hz but the scene at {sr} Hz",
                    bank.sample_rate
                )));
            }
            let clip = bank.clip(ev.class_index, len as f64 / sr as f64, *seed)?;
            let mut samples = clip.into_samples();
            samples.resize(len, 0.0);
            Ok(samples)
        }
        (ClipSource::Synthetic { .. }, CorpusIndex::Files(_)) => Err(Error::Config(
            "scene references synthetic clips but the corpus is file based".into(),
        )),
        (ClipSource::File { path }, _) => {
            let clip = load_clip(path, sr)?;
            let offset = seconds_to_samples(ev.clip_offset_s, sr);
            if offset + len > clip.len() {
                return Err(Error::ClipTooShort {
                    clip: path.display().to_string(),
                    offset,
                    needed: len,
                    available: clip.len(),
                });
            }
            Ok(clip[offset..offset + len].to_vec())
        }
    }
}
