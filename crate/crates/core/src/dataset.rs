//! Trajectory data model, file ingestion, stationary preprocessing and
//! windowing into prediction examples.
//!
//! A dataset is a CSV of per-frame agent positions
//! (`scene_id,agent_id,agent_class,frame,x,y`, optionally followed by a
//! `map_id` column) plus a JSON map file holding one map object or an array
//! of them. Lines beginning with `#` are comments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{path_length, Extents, Rect, Vec2};

/// Frames of history including the current frame.
pub const HISTORY_FRAMES: usize = 5;
/// Frames predicted after the current frame.
pub const FUTURE_FRAMES: usize = 8;
/// Frames spanned by one example window.
pub const WINDOW_FRAMES: usize = HISTORY_FRAMES + FUTURE_FRAMES;
/// Default annotation rate.
pub const DEFAULT_FRAME_RATE_HZ: f64 = 2.0;
/// Whole-track path length below which a vehicle is considered parked.
pub const STATIONARY_PATH_THRESHOLD_M: f64 = 1.0;

const CSV_HEADER: [&str; 6] = ["scene_id", "agent_id", "agent_class", "frame", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    /// Pedestrians and cyclists are vulnerable road users.
    pub fn is_vru(self) -> bool {
        !matches!(self, AgentClass::Vehicle)
    }

    /// Cyclists share the pedestrian model.
    pub fn model_class(self) -> ModelClass {
        match self {
            AgentClass::Vehicle => ModelClass::Vehicle,
            AgentClass::Pedestrian | AgentClass::Cyclist => ModelClass::Pedestrian,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vehicle" => Ok(AgentClass::Vehicle),
            "pedestrian" => Ok(AgentClass::Pedestrian),
            "cyclist" => Ok(AgentClass::Cyclist),
            other => Err(format!("unknown agent_class {other:?}")),
        }
    }
}

/// The two predictor families: one model per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Vehicle,
    Pedestrian,
}

impl ModelClass {
    pub const ALL: [ModelClass; 2] = [ModelClass::Vehicle, ModelClass::Pedestrian];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelClass::Vehicle => "vehicle",
            ModelClass::Pedestrian => "pedestrian",
        }
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "vehicle" => Ok(ModelClass::Vehicle),
            "pedestrian" => Ok(ModelClass::Pedestrian),
            other => Err(format!("unknown model class {other:?}")),
        }
    }
}

fn default_frame_rate() -> f64 {
    DEFAULT_FRAME_RATE_HZ
}

/// A map: extents plus drivable and crosswalk rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub map_id: String,
    pub extents: Extents,
    #[serde(default)]
    pub drivable: Vec<Rect>,
    #[serde(default)]
    pub crosswalks: Vec<Rect>,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
}

impl MapSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.extents.is_valid() {
            return Err(Error::Config(format!(
                "map {}: extents must satisfy x_min < x_max and y_min < y_max",
                self.map_id
            )));
        }
        for (kind, rects) in [("drivable", &self.drivable), ("crosswalk", &self.crosswalks)] {
            if let Some(r) = rects.iter().find(|r| !self.extents.contains_rect(r)) {
                return Err(Error::Config(format!(
                    "map {}: {kind} rectangle {r:?} lies outside the extents",
                    self.map_id
                )));
            }
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "map {}: frame_rate_hz must be positive",
                self.map_id
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate_hz
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.drivable.iter().any(|r| r.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub agent_id: String,
    pub agent_class: AgentClass,
    pub first_frame: i64,
    /// One position per consecutive frame.
    pub positions: Vec<Vec2>,
    pub is_stationary_track: bool,
}

impl Track {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last_frame(&self) -> i64 {
        self.first_frame + self.positions.len() as i64 - 1
    }

    /// Position at absolute frame `frame`, if the track covers it.
    pub fn at_frame(&self, frame: i64) -> Option<Vec2> {
        let idx = frame - self.first_frame;
        if idx < 0 {
            return None;
        }
        self.positions.get(idx as usize).copied()
    }

    pub fn path_length(&self) -> f64 {
        path_length(&self.positions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub map_id: String,
    pub tracks: Vec<Track>,
}

impl Scene {
    pub fn frame_range(&self) -> Option<(i64, i64)> {
        let lo = self.tracks.iter().map(|t| t.first_frame).min()?;
        let hi = self.tracks.iter().map(Track::last_frame).max()?;
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneDataset {
    pub scenes: Vec<Scene>,
    pub maps: Vec<MapSpec>,
    /// Positions moved onto the map extents during ingestion.
    #[serde(default)]
    pub clamped_positions: usize,
}

impl SceneDataset {
    pub fn map(&self, map_id: &str) -> Option<&MapSpec> {
        self.maps.iter().find(|m| m.map_id == map_id)
    }

    /// Scenes recorded on `map_id`.
    pub fn scenes_on<'a>(&'a self, map_id: &'a str) -> impl Iterator<Item = &'a Scene> + 'a {
        self.scenes.iter().filter(move |s| s.map_id == map_id)
    }

    /// Copy restricted to the given scene ids, preserving order.
    pub fn subset(&self, scene_ids: &BTreeSet<String>) -> SceneDataset {
        SceneDataset {
            scenes: self
                .scenes
                .iter()
                .filter(|s| scene_ids.contains(&s.scene_id))
                .cloned()
                .collect(),
            maps: self.maps.clone(),
            clamped_positions: 0,
        }
    }

    pub fn track_count(&self) -> usize {
        self.scenes.iter().map(|s| s.tracks.len()).sum()
    }
}

/// One (agent, reference frame) window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionExample {
    pub scene_id: String,
    pub agent_id: String,
    pub map_id: String,
    pub agent_class: AgentClass,
    pub t_ref: i64,
    /// Frames `t_ref-4 ..= t_ref`.
    pub history: [Vec2; HISTORY_FRAMES],
    /// Frames `t_ref+1 ..= t_ref+8`.
    pub future: [Vec2; FUTURE_FRAMES],
    pub current_position: Vec2,
    /// Frame interval in seconds.
    pub dt: f64,
    pub max_history_speed: f64,
    /// Path length from the first history frame to the last future frame.
    pub window_path_length: f64,
    pub whole_track_stationary: bool,
}

impl PredictionExample {
    pub fn model_class(&self) -> ModelClass {
        self.agent_class.model_class()
    }
}

fn read_maps(path: &Path) -> Result<Vec<MapSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let maps: Vec<MapSpec> = if value.is_array() {
        serde_json::from_value(value).map_err(|e| Error::json(path, e))?
    } else {
        vec![serde_json::from_value(value).map_err(|e| Error::json(path, e))?]
    };
    let mut seen = BTreeSet::new();
    for m in &maps {
        m.validate()?;
        if !seen.insert(m.map_id.clone()) {
            return Err(Error::Reference(format!("duplicate map_id {:?}", m.map_id)));
        }
    }
    Ok(maps)
}

struct Row {
    frame: i64,
    pos: Vec2,
    line: usize,
}

struct PendingTrack {
    class: AgentClass,
    rows: Vec<Row>,
}

fn parse_field<T: FromStr>(record: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {name}"),
    })?;
    raw.trim().parse::<T>().map_err(|e| Error::Parse {
        line,
        message: format!("bad {name} {raw:?}: {e}"),
    })
}

/// Loads a dataset CSV and its companion map file.
///
/// Tracks are sorted by (scene, agent, frame); positions outside the map
/// extents are clamped and counted in [`SceneDataset::clamped_positions`].
pub fn load_dataset(csv_path: &Path, map_path: &Path) -> Result<SceneDataset> {
    let maps = read_maps(map_path)?;
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let header_line = headers.position().map(|p| p.line() as usize).unwrap_or(1);
    let names: Vec<&str> = headers.iter().collect();
    let has_map_column = match names.as_slice() {
        n if n == CSV_HEADER => false,
        [rest @ .., "map_id"] if rest == CSV_HEADER => true,
        _ => {
            return Err(Error::Parse {
                line: header_line,
                message: format!(
                    "expected header {:?} (optionally followed by map_id), found {names:?}",
                    CSV_HEADER.join(",")
                ),
            })
        }
    };
    let width = if has_map_column { 7 } else { 6 };

    let mut pending: BTreeMap<(String, String), PendingTrack> = BTreeMap::new();
    let mut scene_maps: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let scene_id = record[0].to_string();
        let agent_id = record[1].to_string();
        if scene_id.is_empty() || agent_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty scene_id or agent_id".into(),
            });
        }
        let class: AgentClass = parse_field(&record, 2, "agent_class", line)?;
        let frame: i64 = parse_field(&record, 3, "frame", line)?;
        let x: f64 = parse_field(&record, 4, "x", line)?;
        let y: f64 = parse_field(&record, 5, "y", line)?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "non-finite coordinate".into(),
            });
        }

        let map_id = if has_map_column {
            record[6].to_string()
        } else if maps.len() == 1 {
            maps[0].map_id.clone()
        } else {
            return Err(Error::Reference(format!(
                "dataset has no map_id column but the map file defines {} maps",
                maps.len()
            )));
        };
        match scene_maps.get(&scene_id) {
            Some((existing, first_line)) if *existing != map_id => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "scene {scene_id} bound to map {existing} at line {first_line} but {map_id} here"
                    ),
                })
            }
            Some(_) => {}
            None => {
                scene_maps.insert(scene_id.clone(), (map_id, line));
            }
        }

        let entry = pending
            .entry((scene_id, agent_id))
            .or_insert_with(|| PendingTrack { class, rows: Vec::new() });
        if entry.class != class {
            return Err(Error::Parse {
                line,
                message: format!(
                    "agent_class {class} conflicts with earlier class {}",
                    entry.class
                ),
            });
        }
        entry.rows.push(Row {
            frame,
            pos: Vec2::new(x, y),
            line,
        });
    }

    let mut clamped = 0usize;
    let mut scenes: Vec<Scene> = Vec::new();
    for ((scene_id, agent_id), mut track) in pending {
        let (map_id, _) = &scene_maps[&scene_id];
        let map = maps.iter().find(|m| &m.map_id == map_id).ok_or_else(|| {
            Error::Reference(format!("scene {scene_id} references unknown map_id {map_id:?}"))
        })?;
        track.rows.sort_by_key(|r| r.frame);
        for w in track.rows.windows(2) {
            if w[1].frame == w[0].frame {
                return Err(Error::Structure {
                    track: format!("{scene_id}/{agent_id}"),
                    message: format!("duplicate frame {} (line {})", w[1].frame, w[1].line),
                });
            }
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::Structure {
                    track: format!("{scene_id}/{agent_id}"),
                    message: format!("gap at frame {}", w[0].frame + 1),
                });
            }
        }
        let positions = track
            .rows
            .iter()
            .map(|r| {
                let c = map.extents.clamp(r.pos);
                if c != r.pos {
                    clamped += 1;
                }
                c
            })
            .collect();
        let t = Track {
            agent_id,
            agent_class: track.class,
            first_frame: track.rows[0].frame,
            positions,
            is_stationary_track: false,
        };
        match scenes.last_mut() {
            Some(s) if s.scene_id == scene_id => s.tracks.push(t),
            _ => scenes.push(Scene {
                scene_id,
                map_id: map_id.clone(),
                tracks: vec![t],
            }),
        }
    }
    if clamped > 0 {
        log::warn!(
            "{}: clamped {clamped} positions onto map extents",
            csv_path.display()
        );
    }
    Ok(SceneDataset {
        scenes,
        maps,
        clamped_positions: clamped,
    })
}

/// Writes the dataset rows in the order they are stored. The `map_id` column
/// is emitted only when more than one map is present. `comments` become
/// leading `#` lines.
pub fn write_dataset_csv(dataset: &SceneDataset, path: &Path, comments: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for c in comments {
        writeln!(out, "# {c}").expect("write to Vec");
    }
    let with_map = dataset.maps.len() > 1;
    let mut header = CSV_HEADER.join(",");
    if with_map {
        header.push_str(",map_id");
    }
    writeln!(out, "{header}").expect("write to Vec");
    for scene in &dataset.scenes {
        for track in &scene.tracks {
            for (i, p) in track.positions.iter().enumerate() {
                write!(
                    out,
                    "{},{},{},{},{},{}",
                    scene.scene_id,
                    track.agent_id,
                    track.agent_class,
                    track.first_frame + i as i64,
                    p.x,
                    p.y
                )
                .expect("write to Vec");
                if with_map {
                    write!(out, ",{}", scene.map_id).expect("write to Vec");
                }
                out.push(b'\n');
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the map file: a single object for one map, an array otherwise.
pub fn write_maps_json(maps: &[MapSpec], path: &Path) -> Result<()> {
    let text = if maps.len() == 1 {
        serde_json::to_string_pretty(&maps[0])
    } else {
        serde_json::to_string_pretty(maps)
    }
    .map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Replaces every parked vehicle track (whole-track path below `threshold`)
/// with its mean position and flags it stationary. Other tracks, and all
/// pedestrian and cyclist tracks, are left untouched.
pub fn apply_stationary_smoothing(mut dataset: SceneDataset, threshold: f64) -> SceneDataset {
    for track in dataset.scenes.iter_mut().flat_map(|s| s.tracks.iter_mut()) {
        if track.agent_class != AgentClass::Vehicle || track.positions.is_empty() {
            continue;
        }
        if track.path_length() >= threshold {
            continue;
        }
        let first = track.positions[0];
        // Already constant: keep the bits so a second pass is a no-op.
        if track.positions.iter().any(|&p| p != first) {
            let n = track.positions.len() as f64;
            let sum = track
                .positions
                .iter()
                .fold(Vec2::ZERO, |acc, &p| acc + p);
            let mean = sum * (1.0 / n);
            track.positions.iter_mut().for_each(|p| *p = mean);
        }
        track.is_stationary_track = true;
    }
    dataset
}

/// Cuts every track into 13-frame windows, one per admissible reference
/// frame, in (scene, agent, t_ref) order.
pub fn extract_examples(dataset: &SceneDataset) -> Vec<PredictionExample> {
    let mut out = Vec::new();
    for scene in &dataset.scenes {
        let dt = dataset
            .map(&scene.map_id)
            .map(MapSpec::dt)
            .unwrap_or(1.0 / DEFAULT_FRAME_RATE_HZ);
        for track in &scene.tracks {
            if track.len() < WINDOW_FRAMES {
                continue;
            }
            for start in 0..=(track.len() - WINDOW_FRAMES) {
                let window = &track.positions[start..start + WINDOW_FRAMES];
                let mut history = [Vec2::ZERO; HISTORY_FRAMES];
                history.copy_from_slice(&window[..HISTORY_FRAMES]);
                let mut future = [Vec2::ZERO; FUTURE_FRAMES];
                future.copy_from_slice(&window[HISTORY_FRAMES..]);
                let max_history_speed = history
                    .windows(2)
                    .map(|w| w[1].dist(w[0]) / dt)
                    .fold(0.0, f64::max);
                out.push(PredictionExample {
                    scene_id: scene.scene_id.clone(),
                    agent_id: track.agent_id.clone(),
                    map_id: scene.map_id.clone(),
                    agent_class: track.agent_class,
                    t_ref: track.first_frame + (start + HISTORY_FRAMES - 1) as i64,
                    history,
                    future,
                    current_position: history[HISTORY_FRAMES - 1],
                    dt,
                    max_history_speed,
                    window_path_length: path_length(window),
                    whole_track_stationary: track.is_stationary_track,
                });
            }
        }
    }
    out
}

/// Scene-level train/test split, deterministic in `seed`.
pub fn split_scenes(
    dataset: &SceneDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(SceneDataset, SceneDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.scenes.len();
    if n < 2 {
        return Err(Error::Split(format!(
            "need at least 2 scenes to split, found {n}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = SceneDataset {
        scenes: Vec::with_capacity(n - n_test),
        maps: dataset.maps.clone(),
        clamped_positions: 0,
    };
    let mut test = SceneDataset {
        scenes: Vec::with_capacity(n_test),
        maps: dataset.maps.clone(),
        clamped_positions: 0,
    };
    for (scene, t) in dataset.scenes.iter().zip(is_test) {
        if t {
            test.scenes.push(scene.clone());
        } else {
            train.scenes.push(scene.clone());
        }
    }
    Ok((train, test))
}
