//! Polyphonic sound-event scene synthesis.
//!
//! A [`SceneSpec`] is a complete, seeded description of one mixture: which
//! clips are pasted where, at what SNR, over which background. Rendering a
//! spec is pure, so the same spec always produces bit-identical audio.

mod corpus;
mod dataset;
mod render;
pub mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use corpus::{ClipDescriptor, CorpusIndex, FileCorpus};
pub use dataset::{
    build_dataset, DatasetConfig, InMemoryScenes, Manifest, ManifestRecord, SceneItem,
    SceneSource,
};
pub use render::{render_scene, sample_scene_spec, PlacedEvent, RenderedScene};
pub use synth::SynthBank;

pub const SCENE_SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub(crate) fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train|dev|test)")),
        }
    }
}

/// Where an event's audio comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClipSource {
    /// Generated by the synthetic bank from this seed.
    Synthetic { seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSource {
    SyntheticNoise { seed: u64 },
    File { path: PathBuf, offset_s: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub source: BackgroundSource,
    /// Background RMS level in dBFS.
    pub ref_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    /// Zero-based class index.
    pub class_index: usize,
    pub clip: ClipSource,
    pub clip_offset_s: f64,
    pub clip_duration_s: f64,
    pub onset_s: f64,
    /// Event RMS over its support relative to the background RMS there.
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_spec_version: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub num_classes: usize,
    pub background: BackgroundSpec,
    pub events: Vec<EventSpec>,
}

impl SceneSpec {
    pub fn num_samples(&self) -> usize {
        seconds_to_samples(self.duration_s, self.sample_rate)
    }

    /// Distinct classes named by the events, in increasing order.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.events.iter().map(|e| e.class_index).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

pub(crate) fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

/// How many distinct classes a scene contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ClassPolicy {
    Fixed(usize),
    UniformOver(Vec<usize>),
}

impl ClassPolicy {
    /// Three classes per scene.
    pub fn mix3() -> Self {
        ClassPolicy::Fixed(3)
    }

    /// Three, four or five classes per scene with equal probability.
    pub fn mix3_5() -> Self {
        ClassPolicy::UniformOver(vec![3, 4, 5])
    }

    pub fn max_classes(&self) -> usize {
        match self {
            ClassPolicy::Fixed(k) => *k,
            ClassPolicy::UniformOver(ks) => ks.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Scene-generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub events_per_scene: usize,
    pub min_clip_s: f64,
    pub max_clip_s: f64,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub ref_db: f64,
    pub class_policy: ClassPolicy,
    pub max_events_per_class: usize,
    pub split: Split,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            duration_s: 6.0,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
            events_per_scene: 6,
            min_clip_s: 1.5,
            max_clip_s: 3.0,
            snr_db_min: 15.0,
            snr_db_max: 25.0,
            ref_db: -50.0,
            class_policy: ClassPolicy::mix3(),
            max_events_per_class: 2,
            split: Split::Train,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("scene duration and sample rate must be positive".into()));
        }
        if !(self.min_clip_s > 0.0 && self.min_clip_s <= self.max_clip_s) {
            return Err(Error::Config(format!(
                "clip duration range [{}, {}] is invalid",
                self.min_clip_s, self.max_clip_s
            )));
        }
        if self.max_clip_s > self.duration_s {
            return Err(Error::Config(format!(
                "clips up to {} s do not fit in {} s scenes",
                self.max_clip_s, self.duration_s
            )));
        }
        if self.snr_db_min > self.snr_db_max {
            return Err(Error::Config("snr range is inverted".into()));
        }
        let counts: Vec<usize> = match &self.class_policy {
            ClassPolicy::Fixed(k) => vec![*k],
            ClassPolicy::UniformOver(ks) => ks.clone(),
        };
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Config("class policy needs positive class counts".into()));
        }
        for k in counts {
            if k > self.events_per_scene || k * self.max_events_per_class < self.events_per_scene {
                return Err(Error::Config(format!(
                    "{} events cannot cover {k} classes with at most {} events per class",
                    self.events_per_scene, self.max_events_per_class
                )));
            }
        }
        Ok(())
    }
}
