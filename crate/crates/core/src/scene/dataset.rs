use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{render_scene, sample_scene_spec, CorpusIndex, RenderedScene, SceneConfig};
use crate::audio::{read_wav_mono, write_wav};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::signal::{StemSet, Waveform};

const TARGET_TAG: u64 = 0x7a6e7;
const RENDER_CHUNK: usize = 32;
pub(crate) const MANIFEST_FILE: &str = "manifest.jsonl";
const DATASET_FILE: &str = "dataset.json";
const CLASSES_FILE: &str = "classes.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub count: usize,
    pub seed: u64,
    /// Pre-defined target classes stored per mixture (ordering randomised).
    pub num_targets: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            count: 100,
            seed: 0,
            num_targets: 3,
        }
    }
}

/// One mixture with everything needed for training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneItem {
    pub id: String,
    pub mixture: Waveform,
    pub background: Waveform,
    pub stems: StemSet,
    pub active_classes: Vec<usize>,
    /// Pre-defined selection targets, a random ordering of active classes.
    pub target_classes: Vec<usize>,
}

impl SceneItem {
    pub fn classes_in_mixture(&self) -> usize {
        self.active_classes.len()
    }
}

/// Anything that yields scene items by index.
pub trait SceneSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn item(&self, index: usize) -> Result<SceneItem>;

    fn num_classes(&self) -> usize;

    /// Stable identifier of the underlying data, recorded in reports.
    fn source_id(&self) -> String;

    /// Human-readable class labels indexed by class, when known.
    fn class_names(&self) -> Option<Vec<String>> {
        None
    }
}

/// Scenes held in memory, used for quick experiments and tests.
#[derive(Clone, Debug)]
pub struct InMemoryScenes {
    pub items: Vec<SceneItem>,
    pub num_classes: usize,
    pub name: String,
}

impl InMemoryScenes {
    /// Renders `config.count` scenes without touching the disk.
    pub fn generate(corpus: &CorpusIndex, config: &DatasetConfig) -> Result<Self> {
        let items = (0..config.count)
            .into_par_iter()
            .map(|i| make_item(corpus, config, i).map(|(_, item)| item))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            items,
            num_classes: corpus.num_classes(),
            name: format!("memory-{}-seed{}", config.scene.split.as_str(), config.seed),
        })
    }
}

impl SceneSource for InMemoryScenes {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn item(&self, index: usize) -> Result<SceneItem> {
        self.items
            .get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("item {index} out of range")))
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn source_id(&self) -> String {
        self.name.clone()
    }
}

fn item_seed(config: &DatasetConfig, index: usize) -> u64 {
    config.seed ^ index as u64
}

fn make_item(
    corpus: &CorpusIndex,
    config: &DatasetConfig,
    index: usize,
) -> Result<(RenderedScene, SceneItem)> {
    let seed = item_seed(config, index);
    let spec = sample_scene_spec(corpus, &config.scene, seed)?;
    let rendered = render_scene(&spec, corpus)?;
    let active = rendered.stems.active_classes();
    let mut targets = active.clone();
    let mut rng = derive_rng(seed, &[TARGET_TAG, config.scene.split.stream()]);
    targets.shuffle(&mut rng);
    targets.truncate(config.num_targets);
    let item = SceneItem {
        id: format!("{}-{index:06}", config.scene.split.as_str()),
        mixture: rendered.mixture.clone(),
        background: rendered.background.clone(),
        stems: rendered.stems.clone(),
        active_classes: active,
        target_classes: targets,
    };
    Ok((rendered, item))
}

/// One line of `manifest.jsonl`. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture_path: PathBuf,
    pub stem_paths: Vec<PathBuf>,
    pub spec_path: PathBuf,
    pub active_classes: Vec<usize>,
    pub background_path: PathBuf,
    pub target_classes: Vec<usize>,
}

/// A dataset on disk: newline-delimited records plus the class names file.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub class_names: Vec<String>,
    id: String,
}

impl Manifest {
    /// Loads a manifest. `path` may be the `manifest.jsonl` file or its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let bytes =
            fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut records = Vec::new();
        for (line_no, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let record: ManifestRecord = serde_json::from_slice(line).map_err(|e| {
                Error::Config(format!("{} line {}: {e}", path.display(), line_no + 1))
            })?;
            records.push(record);
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let class_names = read_class_names(&dir.join(CLASSES_FILE))?;
        let id = short_digest(&bytes);
        Ok(Self {
            path,
            records,
            class_names,
            id,
        })
    }

    pub fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.dir().join(rel)
    }

    fn load_wave(&self, rel: &Path) -> Result<Waveform> {
        let path = self.resolve(rel);
        let (samples, rate) = read_wav_mono(&path)?;
        Waveform::new(samples, rate).map_err(|e| Error::Audio {
            path,
            detail: e.to_string(),
        })
    }

    pub fn load_record(&self, record: &ManifestRecord) -> Result<SceneItem> {
        let stems = record
            .stem_paths
            .iter()
            .map(|p| self.load_wave(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneItem {
            id: record.id.clone(),
            mixture: self.load_wave(&record.mixture_path)?,
            background: self.load_wave(&record.background_path)?,
            stems: StemSet::new(stems)?,
            active_classes: record.active_classes.clone(),
            target_classes: record.target_classes.clone(),
        })
    }
}

impl SceneSource for Manifest {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn item(&self, index: usize) -> Result<SceneItem> {
        let record = self
            .records
            .get(index)
            .ok_or_else(|| Error::invalid(format!("item {index} out of range")))?;
        self.load_record(record)
    }

    fn num_classes(&self) -> usize {
        self.records
            .first()
            .map(|r| r.stem_paths.len())
            .unwrap_or(self.class_names.len())
    }

    fn source_id(&self) -> String {
        self.id.clone()
    }

    fn class_names(&self) -> Option<Vec<String>> {
        Some(self.class_names.clone())
    }
}

pub(crate) fn short_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_class_names(path: &Path) -> Result<Vec<String>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct DatasetDescription {
    config: DatasetConfig,
    corpus: CorpusIndex,
}

fn item_paths(id: &str, num_classes: usize) -> ManifestRecord {
    ManifestRecord {
        id: id.to_string(),
        mixture_path: PathBuf::from(format!("audio/{id}.mixture.wav")),
        stem_paths: (0..num_classes)
            .map(|n| PathBuf::from(format!("audio/{id}.stem{n:02}.wav")))
            .collect(),
        spec_path: PathBuf::from(format!("scenes/{id}.json")),
        active_classes: Vec::new(),
        background_path: PathBuf::from(format!("audio/{id}.background.wav")),
        target_classes: Vec::new(),
    }
}

fn write_item(out_dir: &Path, rendered: &RenderedScene, item: &SceneItem) -> Result<ManifestRecord> {
    let mut record = item_paths(&item.id, item.stems.num_classes());
    write_wav(&out_dir.join(&record.mixture_path), &item.mixture)?;
    write_wav(&out_dir.join(&record.background_path), &item.background)?;
    for (path, stem) in record.stem_paths.iter().zip(item.stems.stems()) {
        write_wav(&out_dir.join(path), stem)?;
    }
    let spec_path = out_dir.join(&record.spec_path);
    let json = serde_json::to_vec_pretty(&rendered.spec)?;
    fs::write(&spec_path, json)
        .map_err(|e| Error::io(format!("writing {}", spec_path.display()), e))?;
    record.active_classes = item.active_classes.clone();
    record.target_classes = item.target_classes.clone();
    Ok(record)
}

/// Valid leading records of an interrupted run: parseable, consecutive, with
/// all files present.
fn resumable_records(out_dir: &Path, config: &DatasetConfig) -> Result<Vec<String>> {
    let path = out_dir.join(MANIFEST_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut lines = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let Ok(line) = line else { break };
        let Ok(record) = serde_json::from_str::<ManifestRecord>(&line) else {
            break;
        };
        let expected = format!("{}-{index:06}", config.scene.split.as_str());
        let complete = record.id == expected
            && out_dir.join(&record.mixture_path).is_file()
            && out_dir.join(&record.background_path).is_file()
            && out_dir.join(&record.spec_path).is_file()
            && record.stem_paths.iter().all(|p| out_dir.join(p).is_file());
        if !complete || index >= config.count {
            break;
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Renders `config.count` scenes into `out_dir` and writes the manifest.
///
/// Items are appended to the manifest in order as they complete, so an
/// interrupted run can be resumed by calling this again with the same
/// config; already written items are kept.
pub fn build_dataset(config: &DatasetConfig, corpus: &CorpusIndex, out_dir: &Path) -> Result<Manifest> {
    config.scene.validate()?;
    if config.scene.class_policy.max_classes() > corpus.num_classes() {
        return Err(Error::Config(format!(
            "class policy needs up to {} classes, corpus has {}",
            config.scene.class_policy.max_classes(),
            corpus.num_classes()
        )));
    }
    for sub in ["audio", "scenes"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    let description = DatasetDescription {
        config: config.clone(),
        corpus: corpus.clone(),
    };
    let desc_path = out_dir.join(DATASET_FILE);
    if let Ok(existing) = fs::read(&desc_path) {
        let previous: Option<DatasetDescription> = serde_json::from_slice(&existing).ok();
        if previous.as_ref() != Some(&description) {
            return Err(Error::Config(format!(
                "{} holds a different dataset; use an empty output directory",
                out_dir.display()
            )));
        }
    } else {
        fs::write(&desc_path, serde_json::to_vec_pretty(&description)?)
            .map_err(|e| Error::io(format!("writing {}", desc_path.display()), e))?;
    }
    let classes_path = out_dir.join(CLASSES_FILE);
    fs::write(&classes_path, corpus.class_names().join("\n") + "\n")
        .map_err(|e| Error::io(format!("writing {}", classes_path.display()), e))?;

    let kept = resumable_records(out_dir, config)?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(&manifest_path, body)
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
    if !kept.is_empty() {
        tracing::info!(kept = kept.len(), "resuming dataset build");
    }

    let mut manifest_file = OpenOptions::new()
        .append(true)
        .open(&manifest_path)
        .map_err(|e| Error::io(format!("opening {}", manifest_path.display()), e))?;
    let indices: Vec<usize> = (kept.len()..config.count).collect();
    for chunk in indices.chunks(RENDER_CHUNK) {
        let records = chunk
            .par_iter()
            .map(|&i| {
                let (rendered, item) = make_item(corpus, config, i)?;
                write_item(out_dir, &rendered, &item)
            })
            .collect::<Result<Vec<_>>>()?;
        for record in records {
            let line = serde_json::to_string(&record)?;
            writeln!(manifest_file, "{line}")
                .map_err(|e| Error::io(format!("appending to {}", manifest_path.display()), e))?;
        }
        manifest_file
            .flush()
            .map_err(|e| Error::io(format!("flushing {}", manifest_path.display()), e))?;
    }
    Manifest::load(&manifest_path)
}
