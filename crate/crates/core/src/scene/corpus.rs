use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthBank;
use super::Split;
use crate::error::{Error, Result};

/// One audio file available to the scene sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipDescriptor {
    pub path: PathBuf,
    pub duration_s: f64,
    pub split: Split,
}

/// Clips on disk, laid out as `<root>/<split>/<class name>/*.wav`, with
/// background noise under `<root>/<split>/_background/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileCorpus {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    /// Indexed by class.
    pub clips: Vec<Vec<ClipDescriptor>>,
    pub backgrounds: Vec<ClipDescriptor>,
}

/// Source material for scenes: either the synthetic bank or a file corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusIndex {
    Synthetic(SynthBank),
    Files(FileCorpus),
}

const BACKGROUND_DIR: &str = "_background";

impl CorpusIndex {
    pub fn synthetic(num_classes: usize, sample_rate: u32) -> Result<Self> {
        Ok(CorpusIndex::Synthetic(SynthBank::new(num_classes, sample_rate)?))
    }

    /// Scans a corpus directory. Class names are the union of class
    /// directories over all splits, sorted.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let mut names = Vec::new();
        let splits = [Split::Train, Split::Dev, Split::Test];
        for split in splits {
            let dir = root.join(split.as_str());
            if !dir.is_dir() {
                continue;
            }
            for entry in read_dir_sorted(&dir)? {
                if entry.is_dir() {
                    let name = file_name(&entry);
                    if name != BACKGROUND_DIR && !names.contains(&name) {
                        names.push(name);
                    }
                }
            }
        }
        names.sort();
        if names.is_empty() {
            return Err(Error::Config(format!(
                "no class directories under {}/{{train,dev,test}}",
                root.display()
            )));
        }
        let mut clips = vec![Vec::new(); names.len()];
        let mut backgrounds = Vec::new();
        let mut seen = HashSet::new();
        for split in splits {
            let dir = root.join(split.as_str());
            if !dir.is_dir() {
                continue;
            }
            for (class, name) in names.iter().enumerate() {
                let class_dir = dir.join(name);
                if class_dir.is_dir() {
                    clips[class].extend(scan_wavs(&class_dir, split, &mut seen)?);
                }
            }
            let bg_dir = dir.join(BACKGROUND_DIR);
            if bg_dir.is_dir() {
                backgrounds.extend(scan_wavs(&bg_dir, split, &mut seen)?);
            }
        }
        Ok(CorpusIndex::Files(FileCorpus {
            root: root.to_path_buf(),
            class_names: names,
            clips,
            backgrounds,
        }))
    }

    pub fn num_classes(&self) -> usize {
        match self {
            CorpusIndex::Synthetic(bank) => bank.num_classes,
            CorpusIndex::Files(f) => f.class_names.len(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self {
            CorpusIndex::Synthetic(bank) => bank.class_names(),
            CorpusIndex::Files(f) => f.class_names.clone(),
        }
    }

    /// Clips of `class` in `split` at least `min_duration_s` long. Synthetic
    /// corpora return `None`: every class has unlimited clips.
    pub(crate) fn usable_clips(
        &self,
        class: usize,
        split: Split,
        min_duration_s: f64,
    ) -> Option<Vec<&ClipDescriptor>> {
        match self {
            CorpusIndex::Synthetic(_) => None,
            CorpusIndex::Files(f) => Some(
                f.clips[class]
                    .iter()
                    .filter(|c| c.split == split && c.duration_s >= min_duration_s)
                    .collect(),
            ),
        }
    }

    pub(crate) fn class_available(&self, class: usize, split: Split, min_duration_s: f64) -> bool {
        self.usable_clips(class, split, min_duration_s)
            .is_none_or(|c| !c.is_empty())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    entries.sort();
    Ok(entries)
}

fn scan_wavs(
    dir: &Path,
    split: Split,
    seen: &mut HashSet<PathBuf>,
) -> Result<Vec<ClipDescriptor>> {
    let mut out = Vec::new();
    for path in read_dir_sorted(dir)? {
        let is_wav = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav {
            continue;
        }
        let canonical = path
            .canonicalize()
            .map_err(|e| Error::io(format!("resolving {}", path.display()), e))?;
        if !seen.insert(canonical) {
            return Err(Error::Config(format!(
                "{} appears in more than one split",
                path.display()
            )));
        }
        let reader = hound::WavReader::open(&path).map_err(|e| Error::Audio {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        let spec = reader.spec();
        let duration_s = reader.duration() as f64 / spec.sample_rate as f64;
        out.push(ClipDescriptor {
            path,
            duration_s,
            split,
        });
    }
    Ok(out)
}
