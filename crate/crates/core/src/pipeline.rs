//! Stage orchestration: generate → heatmap → train → evaluate → report.
//!
//! Stages communicate only through files in the output directory, so any
//! stage can be re-run on its own once its inputs exist.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{
    apply_stationary_smoothing, extract_examples, load_dataset, split_scenes, write_dataset_csv,
    ModelClass, PredictionExample, SceneDataset, STATIONARY_PATH_THRESHOLD_M,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_report, read_bins_csv, read_report_csv, read_scores_csv, score_example, write_bins_csv,
    write_report_csv, write_scores_csv, ScoringConfig, HIGH_SPEED_THRESHOLD_MPS,
};
use crate::predictor::{train, Checkpoint, TrainConfig, Variant};
use crate::report::{
    bin_edges, emit_result_tables, paired_fde_differences, render_fde_diff_colorplot, render_stratified_bars,
    render_weight_heatmap_svg, BarKey,
};
use crate::riskmap::{RiskHeatmap, DEFAULT_GRID_N, MAX_WEIGHT, MIN_WEIGHT};
use crate::simgen::{generate_world, simulate_scenes, WorldConfig};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MAP_FILE: &str = "map.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const SPLIT_FILE: &str = "split.json";
pub const HEATMAP_FILE: &str = "heatmap.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "report.csv";
pub const BINS_FILE: &str = "bins.csv";
pub const TABLES_FILE: &str = "tables.md";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Heatmap,
    Train,
    Evaluate,
    Report,
    All,
}

impl Stage {
    pub const SEQUENCE: [Stage; 5] = [Stage::Generate, Stage::Heatmap, Stage::Train, Stage::Evaluate, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Heatmap => "heatmap",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::SEQUENCE
            .into_iter()
            .chain([Stage::All])
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// External dataset CSV; when unset the generate stage simulates one.
    pub dataset: Option<PathBuf>,
    /// Map JSON accompanying `dataset`.
    pub maps: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub stationary_threshold_m: f64,
    pub test_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stationary_threshold_m: STATIONARY_PATH_THRESHOLD_M,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub grid_n: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig { grid_n: DEFAULT_GRID_N }
    }
}

/// Hyperparameters shared by all variants plus optional per-variant
/// overrides (any `TrainConfig` field except `variant` and `seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variants: Vec<Variant>,
    pub common: Value,
    pub per_variant: serde_json::Map<String, Value>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let mut common = serde_json::to_value(TrainConfig::new(Variant::Baseline, 0)).expect("serializable");
        if let Value::Object(m) = &mut common {
            m.remove("variant");
            m.remove("seed");
        }
        TrainSection {
            variants: Variant::ALL.to_vec(),
            common,
            per_variant: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub kde_samples: usize,
    pub high_speed_threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            kde_samples: 64,
            high_speed_threshold: HIGH_SPEED_THRESHOLD_MPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub speed_bin_width: f64,
    pub speed_max: f64,
    pub weight_bin_width: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            speed_bin_width: 2.0,
            speed_max: 24.0,
            weight_bin_width: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the world, the split, training and KDE sampling.
    pub seed: u64,
    pub paths: Paths,
    pub world: WorldConfig,
    pub preprocess: PreprocessConfig,
    pub heatmap: HeatmapConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            paths: Paths {
                output: PathBuf::from("out"),
                ..Paths::default()
            },
            world: WorldConfig::default(),
            preprocess: PreprocessConfig::default(),
            heatmap: HeatmapConfig::default(),
            train: TrainSection::default(),
            evaluate: EvaluateConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Sets `dotted.key` in a JSON object tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key {key:?} has an empty segment")));
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(Error::Config(format!(
                    "override {key:?}: {} is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl PipelineConfig {
    /// Reads the config file (defaults when `path` is `None`) and applies
    /// `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<PipelineConfig>(&text).map_err(|e| Error::json(p, e))?
            }
            None => PipelineConfig::default(),
        };
        if overrides.is_empty() {
            base.validate()?;
            return Ok(base);
        }
        let mut value = serde_json::to_value(&base).expect("serializable");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("after --set overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.variants.is_empty() {
            return Err(Error::Config("train.variants must name at least one variant".into()));
        }
        let unique: BTreeSet<&str> = self.train.variants.iter().map(|v| v.as_str()).collect();
        if unique.len() != self.train.variants.len() {
            return Err(Error::Config("train.variants lists a variant twice".into()));
        }
        for key in self.train.per_variant.keys() {
            key.parse::<Variant>()
                .map_err(|e| Error::Config(format!("train.per_variant: {e}")))?;
        }
        for v in &self.train.variants {
            self.train_config(*v)?.validate()?;
        }
        if self.heatmap.grid_n == 0 {
            return Err(Error::Config("heatmap.grid_n must be positive".into()));
        }
        if self.evaluate.kde_samples < 2 {
            return Err(Error::Config("evaluate.kde_samples must be at least 2".into()));
        }
        let r = &self.report;
        if !(r.speed_bin_width > 0.0 && r.speed_max > 0.0 && r.weight_bin_width > 0.0) {
            return Err(Error::Config("report bin widths and speed_max must be positive".into()));
        }
        if self.paths.dataset.is_some() != self.paths.maps.is_some() {
            return Err(Error::Config("paths.dataset and paths.maps must be given together".into()));
        }
        Ok(())
    }

    /// The world actually simulated: `world` with the global seed.
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            ..self.world.clone()
        }
    }

    pub fn train_config(&self, variant: Variant) -> Result<TrainConfig> {
        let mut v = self.train.common.clone();
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::Config("train.common must be an object".into()))?;
        if let Some(extra) = self.train.per_variant.get(variant.as_str()) {
            let extra = extra
                .as_object()
                .ok_or_else(|| Error::Config(format!("train.per_variant.{variant} must be an object")))?;
            for (k, x) in extra {
                obj.insert(k.clone(), x.clone());
            }
        }
        obj.insert("variant".into(), json!(variant));
        obj.insert("seed".into(), json!(self.seed));
        serde_json::from_value(v).map_err(|e| Error::Config(format!("train config for {variant}: {e}")))
    }

    fn provenance(&self, stage: Stage) -> Value {
        json!({
            "stage": stage.as_str(),
            "seed": self.seed,
            "config": self,
        })
    }

    /// Provenance as CSV comment lines.
    fn comment_lines(&self, stage: Stage) -> Vec<String> {
        vec![
            format!("riskweave {} v{}", stage, env!("CARGO_PKG_VERSION")),
            format!("seed={}", self.seed),
            format!("config={}", serde_json::to_string(self).expect("serializable")),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub test_fraction: f64,
    pub stationary_threshold_m: f64,
    pub smoothed_tracks: usize,
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
    pub provenance: Value,
}

/// Runs one stage, or every stage in order for [`Stage::All`]. `only`
/// restricts train and evaluate to a single variant.
pub fn run(config: &PipelineConfig, stage: Stage, only: Option<Variant>) -> Result<()> {
    config.validate()?;
    if let Some(v) = only {
        if !config.train.variants.contains(&v) {
            return Err(Error::Config(format!("variant {v} is not listed in train.variants")));
        }
    }
    let out = &config.paths.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(RESOLVED_CONFIG_FILE), &config)?;
    let stages: Vec<Stage> = match stage {
        Stage::All => Stage::SEQUENCE.to_vec(),
        s => vec![s],
    };
    for s in stages {
        info!("stage {s}");
        match s {
            Stage::Generate => generate(config)?,
            Stage::Heatmap => heatmap(config)?,
            Stage::Train => train_stage(config, only)?,
            Stage::Evaluate => evaluate(config, only)?,
            Stage::Report => report(config)?,
            Stage::All => unreachable!(),
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `value` (a JSON object) with an extra `provenance` key, which
/// the readers ignore.
fn write_with_provenance<T: Serialize>(path: &Path, value: &T, provenance: Value) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::json(path, e))?;
    if let Value::Object(m) = &mut v {
        m.insert("provenance".into(), provenance);
    }
    write_json(path, &v)
}

/// Puts the provenance lines in a leading `<!-- -->` comment, valid in both
/// SVG and Markdown.
fn stamp(cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // "--" may not appear inside an XML comment; the JSON escape keeps the
    // config text equivalent.
    let lines = cfg.comment_lines(Stage::Report).join("\n").replace("--", "-\\u002d");
    std::fs::write(path, format!("<!-- {lines} -->\n{body}")).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn require(stage: Stage, requires: Stage, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPrerequisite {
            stage: stage.to_string(),
            requires: requires.to_string(),
            path,
        })
    }
}

fn generate(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.paths.output;
    let comments = cfg.comment_lines(Stage::Generate);
    let dataset = match (&cfg.paths.dataset, &cfg.paths.maps) {
        (Some(csv), Some(maps)) => {
            info!("loading {}", csv.display());
            load_dataset(csv, maps)?
        }
        _ => {
            let world_cfg = cfg.world_config();
            let world = generate_world(&world_cfg)?;
            let (dataset, annotations) = simulate_scenes(&world, &world_cfg)?;
            write_with_provenance(&out.join(ANNOTATIONS_FILE), &annotations, cfg.provenance(Stage::Generate))?;
            dataset
        }
    };
    single_map(&dataset)?;
    write_dataset_csv(&dataset, &out.join(DATASET_FILE), &comments)?;
    write_with_provenance(&out.join(MAP_FILE), &dataset.maps[0], cfg.provenance(Stage::Generate))?;
    info!(
        "{} scenes, {} tracks",
        dataset.scenes.len(),
        dataset.track_count()
    );
    Ok(())
}

fn single_map(dataset: &SceneDataset) -> Result<()> {
    if dataset.maps.len() != 1 {
        return Err(Error::Config(format!(
            "the pipeline handles exactly one map, found {}",
            dataset.maps.len()
        )));
    }
    Ok(())
}

/// Dataset after stationary smoothing, as every later stage sees it.
fn load_preprocessed(cfg: &PipelineConfig, stage: Stage) -> Result<SceneDataset> {
    let out = &cfg.paths.output;
    let csv = require(stage, Stage::Generate, out.join(DATASET_FILE))?;
    let maps = require(stage, Stage::Generate, out.join(MAP_FILE))?;
    let dataset = load_dataset(&csv, &maps)?;
    single_map(&dataset)?;
    Ok(apply_stationary_smoothing(
        dataset,
        cfg.preprocess.stationary_threshold_m,
    ))
}

fn heatmap(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.paths.output;
    let dataset = load_preprocessed(cfg, Stage::Heatmap)?;
    let smoothed = dataset
        .scenes
        .iter()
        .flat_map(|s| &s.tracks)
        .filter(|t| t.is_stationary_track)
        .count();
    let (train_set, test_set) = split_scenes(&dataset, cfg.preprocess.test_fraction, cfg.seed)?;
    let map = &dataset.maps[0];
    let mut hm = RiskHeatmap::build(&train_set, map, cfg.heatmap.grid_n);
    hm.provenance = Some(cfg.provenance(Stage::Heatmap));
    hm.save(&out.join(HEATMAP_FILE))?;
    let ids = |d: &SceneDataset| d.scenes.iter().map(|s| s.scene_id.clone()).collect();
    let record = SplitRecord {
        seed: cfg.seed,
        test_fraction: cfg.preprocess.test_fraction,
        stationary_threshold_m: cfg.preprocess.stationary_threshold_m,
        smoothed_tracks: smoothed,
        train_scenes: ids(&train_set),
        test_scenes: ids(&test_set),
        provenance: cfg.provenance(Stage::Heatmap),
    };
    write_json(&out.join(SPLIT_FILE), &record)?;
    info!(
        "{} train / {} test scenes, {} interactions counted",
        record.train_scenes.len(),
        record.test_scenes.len(),
        hm.counts.iter().sum::<u64>()
    );
    Ok(())
}

struct Prepared {
    train: Vec<PredictionExample>,
    test: Vec<PredictionExample>,
    heatmap: RiskHeatmap,
    dataset: SceneDataset,
}

fn prepare(cfg: &PipelineConfig, stage: Stage) -> Result<Prepared> {
    let out = &cfg.paths.output;
    let dataset = load_preprocessed(cfg, stage)?;
    let split: SplitRecord = read_json(&require(stage, Stage::Heatmap, out.join(SPLIT_FILE))?)?;
    let heatmap = RiskHeatmap::load(&require(stage, Stage::Heatmap, out.join(HEATMAP_FILE))?)?;
    let pick = |ids: &[String]| -> Result<Vec<PredictionExample>> {
        let set: BTreeSet<String> = ids.iter().cloned().collect();
        let sub = dataset.subset(&set);
        if sub.scenes.len() != set.len() {
            return Err(Error::Reference(format!(
                "{SPLIT_FILE} names scenes missing from {DATASET_FILE}"
            )));
        }
        Ok(extract_examples(&sub))
    };
    Ok(Prepared {
        train: pick(&split.train_scenes)?,
        test: pick(&split.test_scenes)?,
        heatmap,
        dataset,
    })
}

fn checkpoint_path(out: &Path, class: ModelClass, variant: Variant) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("{class}_{variant}.json"))
}

fn selected(cfg: &PipelineConfig, only: Option<Variant>) -> Vec<Variant> {
    match only {
        Some(v) => vec![v],
        None => cfg.train.variants.clone(),
    }
}

fn train_stage(cfg: &PipelineConfig, only: Option<Variant>) -> Result<()> {
    let out = &cfg.paths.output;
    let prepared = prepare(cfg, Stage::Train)?;
    let dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for variant in selected(cfg, only) {
        let tc = cfg.train_config(variant)?;
        for class in ModelClass::ALL {
            let examples: Vec<PredictionExample> = prepared
                .train
                .iter()
                .filter(|e| e.model_class() == class)
                .cloned()
                .collect();
            if examples.is_empty() {
                warn!("no {class} training examples; skipping {class}/{variant}");
                continue;
            }
            let outcome = train(&examples, &prepared.heatmap, &tc)?;
            info!(
                "{class}/{variant}: {} examples ({} weighted), final loss {:.4}",
                outcome.examples_used,
                outcome.effective_examples,
                outcome.loss_history.last().copied().unwrap_or(f64::NAN)
            );
            let mut ck = Checkpoint::new(class, &tc, &outcome);
            ck.provenance = Some(cfg.provenance(Stage::Train));
            ck.save(&checkpoint_path(out, class, variant))?;
        }
    }
    Ok(())
}

fn scores_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("scores_{variant}.csv"))
}

fn evaluate(cfg: &PipelineConfig, only: Option<Variant>) -> Result<()> {
    let out = &cfg.paths.output;
    let prepared = prepare(cfg, Stage::Evaluate)?;
    let map = &prepared.dataset.maps[0];
    let scoring = ScoringConfig {
        kde_samples: cfg.evaluate.kde_samples,
        seed: cfg.seed,
        high_speed_threshold: cfg.evaluate.high_speed_threshold,
    };
    let classes: BTreeSet<ModelClass> = prepared.test.iter().map(|e| e.model_class()).collect();
    let comments = cfg.comment_lines(Stage::Evaluate);
    for variant in selected(cfg, only) {
        let mut models = Vec::new();
        for &class in &classes {
            let path = require(Stage::Evaluate, Stage::Train, checkpoint_path(out, class, variant))?;
            models.push((class, Checkpoint::load(&path)?.model()?));
        }
        let scored = prepared
            .test
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let model = &models
                    .iter()
                    .find(|(c, _)| *c == ex.model_class())
                    .expect("model loaded for every test class")
                    .1;
                score_example(model, ex, i as u64, &prepared.heatmap, map, &scoring)
            })
            .collect::<Result<Vec<_>>>()?;
        write_scores_csv(&scored, &scores_path(out, variant), &comments)?;
        info!("{variant}: scored {} test examples", scored.len());
    }

    // Rebuild the summaries from every variant scored so far, so running
    // variants one at a time gives the same files as a single pass.
    let mut reports = Vec::new();
    let mut bins = Vec::new();
    for &variant in &cfg.train.variants {
        let path = scores_path(out, variant);
        if !path.exists() {
            continue;
        }
        let agg = aggregate_report(&read_scores_csv(&path)?, variant);
        reports.extend(agg.reports);
        bins.push(agg.bins);
    }
    write_report_csv(&reports, &out.join(REPORT_FILE), &comments)?;
    write_bins_csv(&bins, &out.join(BINS_FILE), &comments)?;
    Ok(())
}

fn report(cfg: &PipelineConfig) -> Result<()> {
    for path in render_figures(cfg)? {
        stamp(cfg, &path)?;
    }
    Ok(())
}

/// Renders the figures and tables and returns the files written.
fn render_figures(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = &cfg.paths.output;
    let heatmap = RiskHeatmap::load(&require(Stage::Report, Stage::Heatmap, out.join(HEATMAP_FILE))?)?;
    let reports = read_report_csv(&require(Stage::Report, Stage::Evaluate, out.join(REPORT_FILE))?)?;
    let bins = read_bins_csv(&require(Stage::Report, Stage::Evaluate, out.join(BINS_FILE))?)?;

    let mut written = vec![out.join("heatmap.svg"), out.join(TABLES_FILE)];
    render_weight_heatmap_svg(&heatmap, &written[0])?;
    emit_result_tables(&reports, &written[1])?;

    let baseline_bins = bins.iter().find(|t| t.variant == Variant::Baseline);
    let baseline_scores = match scores_path(out, Variant::Baseline) {
        p if p.exists() => Some(read_scores_csv(&p)?),
        _ => None,
    };
    let (Some(base_bins), Some(base_scores)) = (baseline_bins, baseline_scores) else {
        warn!("no baseline evaluation; difference figures skipped");
        return Ok(written);
    };
    let speed_edges = bin_edges(0.0, cfg.report.speed_max, cfg.report.speed_bin_width);
    let weight_edges = bin_edges(MIN_WEIGHT, MAX_WEIGHT, cfg.report.weight_bin_width);
    for &variant in cfg.train.variants.iter().filter(|v| **v != Variant::Baseline) {
        let Some(vbins) = bins.iter().find(|t| t.variant == variant) else {
            continue;
        };
        let diff = out.join(format!("fde_diff_{variant}.svg"));
        render_fde_diff_colorplot(vbins, base_bins, heatmap.extents, heatmap.grid_n, &diff)?;
        written.push(diff);
        let scores = read_scores_csv(&require(Stage::Report, Stage::Evaluate, scores_path(out, variant))?)?;
        let title = |what: &str| format!("{what}: {} minus Baseline, FDE@3s", variant.title());
        let speed = paired_fde_differences(&scores, &base_scores, ModelClass::Vehicle, BarKey::Speed);
        render_stratified_bars(
            &speed,
            BarKey::Speed,
            &speed_edges,
            &title("Vehicles by speed"),
            &out.join(format!("speed_diff_{variant}.svg")),
        )?;
        written.push(out.join(format!("speed_diff_{variant}.svg")));
        for class in ModelClass::ALL {
            let pts = paired_fde_differences(&scores, &base_scores, class, BarKey::Weight);
            render_stratified_bars(
                &pts,
                BarKey::Weight,
                &weight_edges,
                &title(&format!("{class} by location weight")),
                &out.join(format!("weight_diff_{class}_{variant}.svg")),
            )?;
            written.push(out.join(format!("weight_diff_{class}_{variant}.svg")));
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "world.n_scenes=7".into(),
                "train.common.epochs=3".into(),
                "train.per_variant.combined={\"epochs\": 5}".into(),
                "paths.output=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.world.n_scenes, 7);
        assert_eq!(cfg.train_config(Variant::Baseline).unwrap().epochs, 3);
        assert_eq!(cfg.train_config(Variant::Combined).unwrap().epochs, 5);
        assert_eq!(cfg.paths.output, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        assert!(PipelineConfig::load(None, &["world.n_scenes".into()]).is_err());
        assert!(PipelineConfig::load(None, &["world.no_such_key=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["train.common.epochs=0".into()]).is_err());
        assert!(PipelineConfig::load(None, &["train.per_variant.fancy={}".into()]).is_err());
    }

    #[test]
    fn global_seed_drives_world_and_training() {
        let cfg = PipelineConfig::load(None, &["seed=7".into()]).unwrap();
        assert_eq!(cfg.world_config().seed, 7);
        assert_eq!(cfg.train_config(Variant::LocationRisk).unwrap().seed, 7);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::SEQUENCE.into_iter().chain([Stage::All]) {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
    }
}
