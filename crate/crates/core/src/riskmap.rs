//! Location-risk heatmaps.
//!
//! For every frame of every scene the closest pair between a moving vehicle
//! and a vulnerable road user is found, and the grid bin holding the pair's
//! midpoint is incremented. The resulting count grid is mapped affinely onto
//! `[1, 10]` and used as a per-location loss weight.
//!
//! Grids are stored row-major with `y` as the row: cell `(ix, iy)` lives at
//! index `iy * grid_n + ix`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AgentClass, MapSpec, SceneDataset, Track};
use crate::error::{Error, Result};
use crate::geometry::{Extents, Vec2};

pub const DEFAULT_GRID_N: usize = 100;
pub const MIN_WEIGHT: f64 = 1.0;
pub const MAX_WEIGHT: f64 = 10.0;
/// Quarter boundaries of the weight range.
pub const QUARTER_BOUNDS: [f64; 3] = [3.25, 5.5, 7.75];

/// Bin of `p` on an `n`×`n` grid over `extents`, clamped to the grid.
pub fn bin_of(extents: &Extents, n: usize, p: Vec2) -> (usize, usize) {
    let axis = |v: f64, lo: f64, hi: f64| -> usize {
        let f = (n as f64 * (v - lo) / (hi - lo)).floor();
        if f.is_nan() || f < 0.0 {
            0
        } else {
            (f as usize).min(n - 1)
        }
    };
    (
        axis(p.x, extents.x_min, extents.x_max),
        axis(p.y, extents.y_min, extents.y_max),
    )
}

/// Interaction counts per bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    pub grid_n: usize,
    pub counts: Vec<u64>,
}

impl CountGrid {
    pub fn zeros(grid_n: usize) -> Self {
        CountGrid {
            grid_n,
            counts: vec![0; grid_n * grid_n],
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.grid_n + ix]
    }

    pub fn increment(&mut self, ix: usize, iy: usize) {
        self.counts[iy * self.grid_n + ix] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another grid of the same shape, e.g. one built on a disjoint
    /// set of scenes.
    pub fn merge(&mut self, other: &CountGrid) {
        assert_eq!(self.grid_n, other.grid_n, "grid shapes differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// The closest (moving vehicle, VRU) pair at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub frame: i64,
    pub vehicle_id: String,
    pub vru_id: String,
    pub distance: f64,
    pub midpoint: Vec2,
}

/// Closest-pair interactions of one scene, one per frame that has at least
/// one pair. Distance ties go to the lexicographically lowest
/// (vehicle id, VRU id) pair.
pub fn scene_interactions(tracks: &[Track]) -> Vec<Interaction> {
    let mut vehicles: Vec<&Track> = tracks
        .iter()
        .filter(|t| t.agent_class == AgentClass::Vehicle && !t.is_stationary_track)
        .collect();
    let mut vrus: Vec<&Track> = tracks.iter().filter(|t| t.agent_class.is_vru()).collect();
    if vehicles.is_empty() || vrus.is_empty() {
        return Vec::new();
    }
    vehicles.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    vrus.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));

    let lo = tracks.iter().map(|t| t.first_frame).min().unwrap_or(0);
    let hi = tracks.iter().map(Track::last_frame).max().unwrap_or(-1);
    let mut out = Vec::new();
    for frame in lo..=hi {
        let mut best: Option<(f64, &Track, &Track, Vec2, Vec2)> = None;
        for v in &vehicles {
            let Some(pv) = v.at_frame(frame) else { continue };
            for u in &vrus {
                let Some(pu) = u.at_frame(frame) else { continue };
                let d = pv.dist(pu);
                // Strict comparison keeps the first pair in id order on ties.
                if best.as_ref().is_none_or(|b| d < b.0) {
                    best = Some((d, v, u, pv, pu));
                }
            }
        }
        if let Some((d, v, u, pv, pu)) = best {
            out.push(Interaction {
                frame,
                vehicle_id: v.agent_id.clone(),
                vru_id: u.agent_id.clone(),
                distance: d,
                midpoint: pv.midpoint(pu),
            });
        }
    }
    out
}

/// Counts closest-pair interaction midpoints over every scene on `map`.
pub fn build_risk_histogram(train: &SceneDataset, map: &MapSpec, grid_n: usize) -> CountGrid {
    let mut grid = CountGrid::zeros(grid_n);
    for scene in train.scenes_on(&map.map_id) {
        for it in scene_interactions(&scene.tracks) {
            let (ix, iy) = bin_of(&map.extents, grid_n, it.midpoint);
            grid.increment(ix, iy);
        }
    }
    grid
}

/// Affine rescaling of counts onto `[1, 10]`; constant grids map to 1.
pub fn normalize_to_weights(counts: &CountGrid) -> Vec<f64> {
    let min = counts.counts.iter().copied().min().unwrap_or(0);
    let max = counts.counts.iter().copied().max().unwrap_or(0);
    if max == min {
        return vec![MIN_WEIGHT; counts.counts.len()];
    }
    let span = (max - min) as f64;
    counts
        .counts
        .iter()
        .map(|&c| MIN_WEIGHT + (MAX_WEIGHT - MIN_WEIGHT) * (c - min) as f64 / span)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskHeatmap {
    pub map_id: String,
    pub extents: Extents,
    pub grid_n: usize,
    pub counts: Vec<u64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl RiskHeatmap {
    /// Builds the heatmap for `map` from the training scenes.
    pub fn build(train: &SceneDataset, map: &MapSpec, grid_n: usize) -> Self {
        Self::from_counts(&map.map_id, map.extents, build_risk_histogram(train, map, grid_n))
    }

    pub fn from_counts(map_id: &str, extents: Extents, counts: CountGrid) -> Self {
        let weights = normalize_to_weights(&counts);
        RiskHeatmap {
            map_id: map_id.to_string(),
            extents,
            grid_n: counts.grid_n,
            counts: counts.counts,
            weights,
            provenance: None,
        }
    }

    /// A heatmap that weights every location 1.
    pub fn uniform(map_id: &str, extents: Extents, grid_n: usize) -> Self {
        Self::from_counts(map_id, extents, CountGrid::zeros(grid_n))
    }

    pub fn bin(&self, p: Vec2) -> (usize, usize) {
        bin_of(&self.extents, self.grid_n, p)
    }

    pub fn weight_at(&self, ix: usize, iy: usize) -> f64 {
        self.weights[iy * self.grid_n + ix]
    }

    pub fn count_at(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.grid_n + ix]
    }

    /// Weight of the bin containing `p` (nearest edge bin outside extents).
    pub fn lookup_weight(&self, p: Vec2) -> f64 {
        let (ix, iy) = self.bin(p);
        self.weight_at(ix, iy)
    }

    /// World-space rectangle covered by bin `(ix, iy)`.
    pub fn bin_rect(&self, ix: usize, iy: usize) -> crate::geometry::Rect {
        let w = self.extents.width() / self.grid_n as f64;
        let h = self.extents.height() / self.grid_n as f64;
        crate::geometry::Rect::new(
            self.extents.x_min + ix as f64 * w,
            self.extents.y_min + iy as f64 * h,
            self.extents.x_min + (ix + 1) as f64 * w,
            self.extents.y_min + (iy + 1) as f64 * h,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.grid_n * self.grid_n;
        if self.grid_n == 0 || self.counts.len() != cells || self.weights.len() != cells {
            return Err(Error::Config(format!(
                "heatmap {}: grid_n {} does not match {} counts / {} weights",
                self.map_id,
                self.grid_n,
                self.counts.len(),
                self.weights.len()
            )));
        }
        if !self.extents.is_valid() {
            return Err(Error::Config(format!("heatmap {}: invalid extents", self.map_id)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let h: RiskHeatmap = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskStratum {
    Low,
    Medium,
    High,
}

impl RiskStratum {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskStratum::Low => "low",
            RiskStratum::Medium => "medium",
            RiskStratum::High => "high",
        }
    }
}

impl fmt::Display for RiskStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskStratum {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "low" => Ok(RiskStratum::Low),
            "medium" => Ok(RiskStratum::Medium),
            "high" => Ok(RiskStratum::High),
            other => Err(format!("unknown risk stratum {other:?}")),
        }
    }
}

/// Risk label of a location weight.
///
/// Vehicles: first quarter low, second medium, third and fourth high.
/// Pedestrians and cyclists: first quarter low, the rest high.
pub fn assign_risk_stratum(weight: f64, class: AgentClass) -> Result<RiskStratum> {
    if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&weight) {
        return Err(Error::Domain(format!(
            "weight {weight} outside [{MIN_WEIGHT}, {MAX_WEIGHT}]"
        )));
    }
    let [q1, q2, _] = QUARTER_BOUNDS;
    Ok(if weight < q1 {
        RiskStratum::Low
    } else if class.is_vru() || weight >= q2 {
        RiskStratum::High
    } else {
        RiskStratum::Medium
    })
}
