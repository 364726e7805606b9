//! Batch evaluation grouped by the number of selected classes and the
//! number of classes present in each mixture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::pit::{oracle_select, pit_forward};
use crate::removal::{remove_indirect, removal_reference};
use crate::scene::{SceneItem, SceneSource};
use crate::selector::forward;
use crate::signal::{mix_reference, si_sdr, ClassVector, Waveform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// One pass with the I-hot vector.
    Simultaneous,
    /// I one-hot passes whose outputs are summed.
    Iterative,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Simultaneous => "simultaneous",
            SelectionMode::Iterative => "iterative",
        }
    }
}

/// How a removal estimate is produced.
#[derive(Clone, Copy, Debug)]
pub enum RemovalScheme<'a> {
    /// A network trained on removal references.
    Direct(&'a Model),
    /// Mixture minus the selector estimate.
    Indirect(&'a Model),
}

/// Outcome for one mixture.
#[derive(Clone, Debug, PartialEq)]
pub enum ItemOutcome {
    Scored { mixture_si_sdr_db: f64, sdri_db: f64 },
    /// Fewer pre-defined targets than requested.
    Skipped,
    /// The reference has no energy, so SI-SDR is undefined.
    ZeroReference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemResult {
    pub id: String,
    pub classes_in_mixture: usize,
    pub outcome: ItemOutcome,
}

/// One cell of a report. `classes_in_mixture = None` aggregates every
/// mixture for the method and selection count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub selected: usize,
    pub classes_in_mixture: Option<usize>,
    pub count: usize,
    pub skipped: usize,
    pub zero_reference: usize,
    pub mean_mixture_si_sdr_db: Option<f64>,
    pub mean_sdri_db: Option<f64>,
    pub std_sdri_db: Option<f64>,
}

impl ReportRow {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint_id: Option<String>,
    pub manifest_id: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Builds grouped rows from per-item results, reduced in item order.
    pub fn from_items(method: &str, selected: usize, items: &[ItemResult], meta: ReportMeta) -> Self {
        let mut groups: BTreeMap<usize, Vec<&ItemResult>> = BTreeMap::new();
        for it in items {
            groups.entry(it.classes_in_mixture).or_default().push(it);
        }
        let mut rows: Vec<ReportRow> = groups
            .iter()
            .map(|(&c, its)| summarize(method, selected, Some(c), its))
            .collect();
        let all: Vec<&ItemResult> = items.iter().collect();
        rows.push(summarize(method, selected, None, &all));
        Self { meta, rows }
    }

    /// Concatenates the rows of several reports over the same data.
    pub fn merge(reports: impl IntoIterator<Item = EvalReport>) -> Self {
        let mut meta = None;
        let mut rows = Vec::new();
        for r in reports {
            meta.get_or_insert(r.meta);
            rows.extend(r.rows);
        }
        Self {
            meta: meta.unwrap_or_default(),
            rows,
        }
    }

    /// The aggregate row for a method and selection count.
    pub fn overall(&self, method: &str, selected: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.selected == selected && r.classes_in_mixture.is_none())
    }

    pub fn cell(&self, method: &str, selected: usize, classes_in_mixture: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.selected == selected && r.classes_in_mixture == Some(classes_in_mixture)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,selected,classes_in_mixture,count,skipped,zero_reference,mean_mixture_si_sdr_db,mean_sdri_db,std_sdri_db\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                r.selected,
                r.classes_in_mixture.map_or("all".to_string(), |c| c.to_string()),
                r.count,
                r.skipped,
                r.zero_reference,
                fmt_opt(r.mean_mixture_si_sdr_db, 4),
                fmt_opt(r.mean_sdri_db, 4),
                fmt_opt(r.std_sdri_db, 4),
            );
        }
        out
    }

    /// Table with one row per (method, I) and one column per number of
    /// classes in the mixture; cells show mean SDRi and the baseline in
    /// parentheses.
    pub fn to_markdown(&self) -> String {
        let mut mix_counts: Vec<usize> = self.rows.iter().filter_map(|r| r.classes_in_mixture).collect();
        mix_counts.sort_unstable();
        mix_counts.dedup();
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.clone(), r.selected);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "manifest: {}", self.meta.manifest_id);
        if let Some(c) = &self.meta.checkpoint_id {
            let _ = writeln!(out, "checkpoint: {c}");
        }
        if let Some(s) = self.meta.seed {
            let _ = writeln!(out, "seed: {s}");
        }
        out.push('\n');
        out.push_str("| method | # class for Sel. |");
        for c in &mix_counts {
            let _ = write!(out, " {c} in Mix. |");
        }
        out.push_str(" all |\n|---|---|");
        for _ in 0..=mix_counts.len() {
            out.push_str("---|");
        }
        out.push('\n');
        for (method, sel) in keys {
            let _ = write!(out, "| {method} | {sel} |");
            for &c in &mix_counts {
                let _ = write!(out, " {} |", md_cell(self.cell(&method, sel, c)));
            }
            let _ = writeln!(out, " {} |", md_cell(self.overall(&method, sel)));
        }
        out.push_str("\nCells: mean SDRi dB (mean mixture SI-SDR dB) [n]; `–` marks an empty cell.\n");
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (ext, body) in [("csv", self.to_csv()), ("md", self.to_markdown())] {
            let p = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        }
        Ok(())
    }
}

fn md_cell(row: Option<&ReportRow>) -> String {
    match row {
        Some(r) if !r.is_empty() => format!(
            "{} ({}) [{}]",
            fmt_opt(r.mean_sdri_db, 2),
            fmt_opt(r.mean_mixture_si_sdr_db, 2),
            r.count
        ),
        _ => "–".to_string(),
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.digits$}"))
}

fn summarize(method: &str, selected: usize, classes: Option<usize>, items: &[&ItemResult]) -> ReportRow {
    let mut skipped = 0;
    let mut zero = 0;
    let mut base = Vec::new();
    let mut sdri = Vec::new();
    for it in items {
        match it.outcome {
            ItemOutcome::Scored {
                mixture_si_sdr_db,
                sdri_db,
            } => {
                base.push(mixture_si_sdr_db);
                sdri.push(sdri_db);
            }
            ItemOutcome::Skipped => skipped += 1,
            ItemOutcome::ZeroReference => zero += 1,
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let std = mean(&sdri).map(|m| {
        if sdri.len() < 2 {
            0.0
        } else {
            (sdri.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (sdri.len() - 1) as f64).sqrt()
        }
    });
    ReportRow {
        method: method.to_string(),
        selected,
        classes_in_mixture: classes,
        count: sdri.len(),
        skipped,
        zero_reference: zero,
        mean_mixture_si_sdr_db: mean(&base),
        mean_sdri_db: mean(&sdri),
        std_sdri_db: std,
    }
}

fn score(id: &str, classes: usize, reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<ItemResult> {
    let outcome = if reference.iter().all(|&v| v == 0.0) {
        ItemOutcome::ZeroReference
    } else {
        let base = si_sdr(reference, mixture)?;
        ItemOutcome::Scored {
            mixture_si_sdr_db: base,
            sdri_db: si_sdr(reference, estimate)? - base,
        }
    };
    Ok(ItemResult {
        id: id.to_string(),
        classes_in_mixture: classes,
        outcome,
    })
}

fn skipped(item: &SceneItem) -> ItemResult {
    ItemResult {
        id: item.id.clone(),
        classes_in_mixture: item.classes_in_mixture(),
        outcome: ItemOutcome::Skipped,
    }
}

/// First `selected` pre-defined targets, or `None` when there are fewer.
fn targets(item: &SceneItem, selected: usize) -> Result<Option<ClassVector>> {
    if selected == 0 {
        return Err(Error::invalid("at least one class must be selected"));
    }
    if item.target_classes.len() < selected {
        return Ok(None);
    }
    ClassVector::from_indices(item.stems.num_classes(), &item.target_classes[..selected]).map(Some)
}

/// Evaluates every item in parallel, returning results in item order.
pub fn evaluate_items<F>(source: &dyn SceneSource, f: F) -> Result<Vec<ItemResult>>
where
    F: Fn(&SceneItem) -> Result<ItemResult> + Sync,
{
    (0..source.len())
        .into_par_iter()
        .map(|i| source.item(i).and_then(|item| f(&item)))
        .collect()
}

/// Baseline: the unprocessed mixture scored against `x = Σ_i x_{n_i}`.
pub fn eval_mixture_baseline(source: &dyn SceneSource, selected: usize) -> Result<EvalReport> {
    let items = evaluate_items(source, |item| {
        let Some(o) = targets(item, selected)? else {
            return Ok(skipped(item));
        };
        let reference = mix_reference(&item.stems, &o)?;
        score(&item.id, item.classes_in_mixture(), &reference, &item.mixture, &item.mixture)
    })?;
    Ok(EvalReport::from_items(
        "mixture",
        selected,
        &items,
        ReportMeta {
            checkpoint_id: None,
            manifest_id: source.source_id(),
            seed: None,
        },
    ))
}

/// Selector output for the first `selected` targets of an item.
pub fn select_estimate(model: &Model, mixture: &Waveform, o: &ClassVector, mode: SelectionMode) -> Result<Waveform> {
    match mode {
        SelectionMode::Simultaneous => forward(model, mixture, o),
        SelectionMode::Iterative => {
            let mut acc = vec![0.0; mixture.len()];
            for n in o.support() {
                let one = ClassVector::one_hot(o.num_classes(), n)?;
                let est = forward(model, mixture, &one)?;
                acc.iter_mut().zip(est.samples()).for_each(|(a, b)| *a += b);
            }
            Waveform::new(acc, mixture.sample_rate())
        }
    }
}

pub fn selection_method_name(mode: SelectionMode) -> String {
    format!("selector-{}", mode.as_str())
}

fn meta_for(source: &dyn SceneSource, model: &Model) -> ReportMeta {
    ReportMeta {
        checkpoint_id: Some(crate::nn::Checkpoint::new(model.clone()).weights_id()),
        manifest_id: source.source_id(),
        seed: None,
    }
}

pub fn eval_selection(
    source: &dyn SceneSource,
    model: &Model,
    selected: usize,
    mode: SelectionMode,
) -> Result<EvalReport> {
    eval_selection_dumping(source, model, selected, mode, None)
}

fn eval_selection_dumping(
    source: &dyn SceneSource,
    model: &Model,
    selected: usize,
    mode: SelectionMode,
    dump_dir: Option<&Path>,
) -> Result<EvalReport> {
    let items = evaluate_items(source, |item| {
        let Some(o) = targets(item, selected)? else {
            return Ok(skipped(item));
        };
        let reference = mix_reference(&item.stems, &o)?;
        let est = select_estimate(model, &item.mixture, &o, mode)?;
        if let Some(dir) = dump_dir {
            write_wav(&dir.join(format!("{}.mixture.wav", item.id)), &item.mixture)?;
            write_wav(&dir.join(format!("{}.ref.wav", item.id)), &reference)?;
            write_wav(&dir.join(format!("{}.est.wav", item.id)), &est)?;
        }
        score(&item.id, item.classes_in_mixture(), &reference, &est, &item.mixture)
    })?;
    Ok(EvalReport::from_items(
        &selection_method_name(mode),
        selected,
        &items,
        meta_for(source, model),
    ))
}

/// PIT with oracle selection: for the first pre-defined target of each
/// item, the output with the highest SI-SDR against that class is scored.
pub fn eval_pit_oracle(source: &dyn SceneSource, model: &Model) -> Result<EvalReport> {
    let k = match model.config() {
        ModelConfig::Pit(c) => c.output_channels,
        other => {
            return Err(Error::invalid(format!(
                "oracle evaluation needs a PIT model, got {}",
                other.kind_name()
            )))
        }
    };
    let items = evaluate_items(source, |item| {
        if item.classes_in_mixture() > k {
            tracing::warn!(id = %item.id, classes = item.classes_in_mixture(), k, "more classes than PIT outputs");
        }
        let Some(o) = targets(item, 1)? else {
            return Ok(skipped(item));
        };
        let reference = mix_reference(&item.stems, &o)?;
        if reference.is_silent() {
            return score(&item.id, item.classes_in_mixture(), &reference, &reference, &item.mixture);
        }
        let outs = pit_forward(model, &item.mixture)?;
        let best = oracle_select(&outs, &reference)?;
        score(&item.id, item.classes_in_mixture(), &reference, &outs[best], &item.mixture)
    })?;
    Ok(EvalReport::from_items("pit-oracle", 1, &items, meta_for(source, model)))
}

/// Removal of the first `selected` targets, scored against `y − Σ_i x_{n_i}`.
pub fn eval_removal(source: &dyn SceneSource, scheme: RemovalScheme<'_>, selected: usize) -> Result<EvalReport> {
    let (method, model) = match scheme {
        RemovalScheme::Direct(m) => ("removal-direct", m),
        RemovalScheme::Indirect(m) => ("removal-indirect", m),
    };
    let items = evaluate_items(source, |item| {
        let Some(o) = targets(item, selected)? else {
            return Ok(skipped(item));
        };
        let reference = removal_reference(&item.mixture, &item.stems, &o)?;
        let est = match scheme {
            RemovalScheme::Direct(m) => forward(m, &item.mixture, &o)?,
            RemovalScheme::Indirect(m) => remove_indirect(m, &item.mixture, &o)?,
        };
        score(&item.id, item.classes_in_mixture(), &reference, &est, &item.mixture)
    })?;
    Ok(EvalReport::from_items(method, selected, &items, meta_for(source, model)))
}

/// Simultaneous selection on scenes unlike the training data, optionally
/// writing `{id}.mixture.wav`, `{id}.ref.wav` and `{id}.est.wav` per item.
pub fn eval_generalization(
    source: &dyn SceneSource,
    model: &Model,
    selected: usize,
    dump_dir: Option<&Path>,
) -> Result<EvalReport> {
    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut report = eval_selection_dumping(source, model, selected, SelectionMode::Simultaneous, dump_dir)?;
    for r in &mut report.rows {
        r.method = "generalization".to_string();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, classes: usize, outcome: ItemOutcome) -> ItemResult {
        ItemResult {
            id: id.into(),
            classes_in_mixture: classes,
            outcome,
        }
    }

    fn scored(b: f64, s: f64) -> ItemOutcome {
        ItemOutcome::Scored {
            mixture_si_sdr_db: b,
            sdri_db: s,
        }
    }

    #[test]
    fn counts_sum_to_dataset_size() {
        let items = vec![
            item("a", 3, scored(-3.0, 5.0)),
            item("b", 3, scored(-5.0, 7.0)),
            item("c", 4, ItemOutcome::Skipped),
            item("d", 4, ItemOutcome::ZeroReference),
            item("e", 5, scored(-8.0, 1.0)),
        ];
        let r = EvalReport::from_items("m", 1, &items, ReportMeta::default());
        let cells: usize = r
            .rows
            .iter()
            .filter(|r| r.classes_in_mixture.is_some())
            .map(|r| r.count + r.skipped + r.zero_reference)
            .sum();
        assert_eq!(cells, 5);
        let c3 = r.cell("m", 1, 3).unwrap();
        assert_eq!(c3.mean_sdri_db, Some(6.0));
        assert_eq!(c3.mean_mixture_si_sdr_db, Some(-4.0));
        assert!((c3.std_sdri_db.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(r.cell("m", 1, 4).unwrap().is_empty());
        assert_eq!(r.overall("m", 1).unwrap().count, 3);
        assert!(r.to_markdown().contains("–"));
    }

    #[test]
    fn csv_is_stable() {
        let items = vec![item("a", 3, scored(-3.0, 5.0))];
        let r = EvalReport::from_items("m", 2, &items, ReportMeta::default());
        assert_eq!(r.to_csv(), r.clone().to_csv());
        assert!(r.to_csv().contains("m,2,3,1,0,0,-3.0000,5.0000,0.0000"));
        assert!(r.to_csv().contains("m,2,all,1,"));
    }
}
