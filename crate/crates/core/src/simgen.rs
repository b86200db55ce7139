//! Seeded traffic-scene generator.
//!
//! Roads are axis-aligned two-lane corridors (right-hand traffic).
//! Vehicles follow lane centerlines; a fixed fraction of them is parked for
//! the whole scene and another fraction speeds. Pedestrians walk along the
//! sidewalks beside the roads and may cross at a crosswalk; any moving
//! vehicle approaching an occupied crosswalk on its road brakes at
//! 3 m/s² to its stop line, waits for the crosswalk to clear and then
//! re-accelerates. Crosswalks are the planted risk hotspots.
//!
//! Scene `i` draws from its own random stream, so scenes can be generated
//! independently and in any order.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AgentClass, MapSpec, Scene, SceneDataset, Track, DEFAULT_FRAME_RATE_HZ, WINDOW_FRAMES};
use crate::error::{Error, Result};
use crate::geometry::{Extents, Rect, Vec2};

const PEDESTRIAN_SPEED: f64 = 1.4;
const BRAKE_DECEL: f64 = 3.0;
/// Deceleration beyond which a vehicle no longer tries to stop.
const MAX_BRAKE_DECEL: f64 = 8.0;
const ACCEL: f64 = 2.0;
/// Gap between a stop line and the crosswalk edge.
const STOP_LINE_GAP: f64 = 1.0;
/// Sidewalk centerline distance outside the road edge.
const SIDEWALK_OFFSET: f64 = 1.5;
/// A pedestrian this close to their crosswalk counts as occupying it.
const CURB_APPROACH: f64 = 3.0;
const CRUISE_SPEED: (f64, f64) = (8.0, 13.0);
const HIGH_SPEED: (f64, f64) = (16.0, 22.0);
/// Pedestrians appear this far (along the road) from their crosswalk.
const PED_SPAWN_DISTANCE: (f64, f64) = (2.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Runs along x.
    Horizontal,
    /// Runs along y.
    Vertical,
}

/// A straight two-lane road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub axis: Axis,
    /// Road axis coordinate: y for horizontal roads, x for vertical ones.
    pub center: f64,
    pub half_width: f64,
    /// Along-axis extent.
    pub start: f64,
    pub end: f64,
    pub speed_limit: f64,
}

impl RoadSpec {
    pub fn rect(&self) -> Rect {
        let (a, b) = (self.center - self.half_width, self.center + self.half_width);
        match self.axis {
            Axis::Horizontal => Rect::new(self.start, a, self.end, b),
            Axis::Vertical => Rect::new(a, self.start, b, self.end),
        }
    }

    /// World point at along-road coordinate `along` and signed offset
    /// `lateral` from the axis.
    fn point(&self, along: f64, lateral: f64) -> Vec2 {
        match self.axis {
            Axis::Horizontal => Vec2::new(along, self.center + lateral),
            Axis::Vertical => Vec2::new(self.center + lateral, along),
        }
    }

    /// Lane offset for travel direction `dir` (+1 along the axis).
    fn lane_offset(&self, dir: f64) -> f64 {
        let half = 0.5 * self.half_width;
        match self.axis {
            Axis::Horizontal => -dir * half,
            Axis::Vertical => dir * half,
        }
    }

    /// Along-road interval covered by `r`, if it spans this road.
    fn crossing_span(&self, r: &Rect) -> Option<(f64, f64)> {
        let road = self.rect();
        if !road.intersects(r) {
            return None;
        }
        let (lo, hi, across_lo, across_hi) = match self.axis {
            Axis::Horizontal => (r.x0, r.x1, r.y0, r.y1),
            Axis::Vertical => (r.y0, r.y1, r.x0, r.x1),
        };
        let spans = across_lo <= self.center - self.half_width + 1e-9
            && across_hi >= self.center + self.half_width - 1e-9;
        spans.then_some((lo, hi))
    }
}

fn default_extents() -> Extents {
    Extents {
        x_min: 0.0,
        y_min: 0.0,
        x_max: 200.0,
        y_max: 200.0,
    }
}

fn default_roads() -> Vec<RoadSpec> {
    let road = |axis| RoadSpec {
        axis,
        center: 100.0,
        half_width: 7.0,
        start: 0.0,
        end: 200.0,
        speed_limit: 13.9,
    };
    vec![road(Axis::Horizontal), road(Axis::Vertical)]
}

fn default_crosswalks() -> Vec<Rect> {
    vec![
        Rect::new(47.0, 93.0, 53.0, 107.0),
        Rect::new(147.0, 93.0, 153.0, 107.0),
        Rect::new(93.0, 47.0, 107.0, 53.0),
        Rect::new(93.0, 147.0, 107.0, 153.0),
    ]
}

fn default_map_id() -> String {
    "sim-town".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub map_id: String,
    pub extents: Extents,
    pub roads: Vec<RoadSpec>,
    pub crosswalks: Vec<Rect>,
    pub n_scenes: usize,
    pub frames_per_scene: usize,
    pub vehicles_per_scene: usize,
    pub pedestrians_per_scene: usize,
    pub stationary_vehicle_fraction: f64,
    pub high_speed_fraction: f64,
    /// Probability that a pedestrian crosses at the crosswalk they walk to.
    pub crossing_probability: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            map_id: default_map_id(),
            extents: default_extents(),
            roads: default_roads(),
            crosswalks: default_crosswalks(),
            n_scenes: 50,
            frames_per_scene: 40,
            vehicles_per_scene: 20,
            pedestrians_per_scene: 16,
            stationary_vehicle_fraction: 0.27,
            high_speed_fraction: 0.15,
            crossing_probability: 0.8,
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.extents.is_valid() {
            return bad("world extents are invalid".into());
        }
        if self.roads.is_empty() {
            return bad("no drivable area: at least one road is required".into());
        }
        for (name, f) in [
            ("stationary_vehicle_fraction", self.stationary_vehicle_fraction),
            ("high_speed_fraction", self.high_speed_fraction),
            ("crossing_probability", self.crossing_probability),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.frames_per_scene < WINDOW_FRAMES {
            return bad(format!("frames_per_scene must be at least {WINDOW_FRAMES}"));
        }
        for (i, r) in self.roads.iter().enumerate() {
            if !(r.half_width > 0.0 && r.start < r.end && r.speed_limit > 0.0) {
                return bad(format!("road {i} has non-positive width, length or speed limit"));
            }
            if !self.extents.contains_rect(&r.rect()) {
                return bad(format!("road {i} extends outside the world extents"));
            }
            for (j, o) in self.roads.iter().enumerate().skip(i + 1) {
                if o.axis == r.axis && o.rect().intersects(&r.rect()) {
                    return bad(format!("roads {i} and {j} overlap"));
                }
            }
        }
        for (i, c) in self.crosswalks.iter().enumerate() {
            if !self.extents.contains_rect(c) {
                return bad(format!("crosswalk {i} lies outside the world extents"));
            }
            if !self.roads.iter().any(|r| r.crossing_span(c).is_some()) {
                return bad(format!("crosswalk {i} does not span any road"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Stationary,
    Cruising,
    HighSpeed,
    Yielding,
    Crossing,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Behavior::Stationary => "stationary",
            Behavior::Cruising => "cruising",
            Behavior::HighSpeed => "high_speed",
            Behavior::Yielding => "yielding",
            Behavior::Crossing => "crossing",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorLabel {
    pub scene_id: String,
    pub agent_id: String,
    pub behavior: Behavior,
    /// Road the agent drove on or the crosswalk's road, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthAnnotations {
    /// Crosswalks at which at least one crossing was scheduled.
    pub hotspots: Vec<Rect>,
    pub labels: Vec<BehaviorLabel>,
}

impl GroundTruthAnnotations {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Static world: the map plus the road layout it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub map: MapSpec,
    pub roads: Vec<RoadSpec>,
    /// Per crosswalk, the road it spans.
    pub crosswalk_roads: Vec<usize>,
    pub annotations: GroundTruthAnnotations,
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let crosswalk_roads = config
        .crosswalks
        .iter()
        .map(|c| {
            config
                .roads
                .iter()
                .position(|r| r.crossing_span(c).is_some())
                .expect("validated crosswalk")
        })
        .collect();
    let map = MapSpec {
        map_id: config.map_id.clone(),
        extents: config.extents,
        drivable: config.roads.iter().map(RoadSpec::rect).collect(),
        crosswalks: config.crosswalks.clone(),
        frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
    };
    map.validate()?;
    Ok(World {
        map,
        roads: config.roads.clone(),
        crosswalk_roads,
        annotations: GroundTruthAnnotations::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VehicleKind {
    Parked,
    Cruising,
    Speeding,
}

struct SimVehicle {
    road: usize,
    dir: f64,
    /// Along-road coordinate.
    along: f64,
    speed: f64,
    cruise: f64,
    kind: VehicleKind,
    yielded: bool,
    active: bool,
    positions: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Waiting,
    Approach,
    Crossing,
    Depart,
    Gone,
}

struct SimPedestrian {
    crosswalk: usize,
    road: usize,
    /// Along-road walking direction.
    dir: f64,
    along: f64,
    /// Signed sidewalk side (+1 or -1).
    side: f64,
    /// Lateral position while crossing.
    lateral: f64,
    crossing_at: f64,
    will_cross: bool,
    spawn_frame: usize,
    phase: Phase,
    first_frame: usize,
    positions: Vec<Vec2>,
}

impl SimPedestrian {
    fn occupies(&self) -> Option<usize> {
        match self.phase {
            Phase::Crossing => Some(self.crosswalk),
            Phase::Approach if self.will_cross && (self.crossing_at - self.along) * self.dir <= CURB_APPROACH => {
                Some(self.crosswalk)
            }
            _ => None,
        }
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs every scene of the configured world.
pub fn simulate_scenes(world: &World, config: &WorldConfig) -> Result<(SceneDataset, GroundTruthAnnotations)> {
    config.validate()?;
    let total = config.n_scenes * config.vehicles_per_scene;
    let n_parked = (config.stationary_vehicle_fraction * total as f64).round() as usize;
    let remaining = total - n_parked;
    let n_speeding = ((config.high_speed_fraction * remaining as f64).round() as usize).min(remaining);
    let mut kinds: Vec<VehicleKind> = std::iter::repeat_n(VehicleKind::Parked, n_parked)
        .chain(std::iter::repeat_n(VehicleKind::Speeding, n_speeding))
        .chain(std::iter::repeat_n(VehicleKind::Cruising, remaining - n_speeding))
        .collect();
    kinds.shuffle(&mut scene_rng(config.seed, 0));

    let mut scenes = Vec::with_capacity(config.n_scenes);
    let mut labels = Vec::new();
    let mut scheduled = BTreeSet::new();
    for s in 0..config.n_scenes {
        let scene_kinds = &kinds[s * config.vehicles_per_scene..(s + 1) * config.vehicles_per_scene];
        let mut rng = scene_rng(config.seed, s as u64 + 1);
        let (scene, scene_labels, crossings) = simulate_scene(world, config, s, scene_kinds, &mut rng);
        scenes.push(scene);
        labels.extend(scene_labels);
        scheduled.extend(crossings);
    }
    let annotations = GroundTruthAnnotations {
        hotspots: scheduled.iter().map(|&c| world.map.crosswalks[c]).collect(),
        labels,
    };
    Ok((
        SceneDataset {
            scenes,
            maps: vec![world.map.clone()],
            clamped_positions: 0,
        },
        annotations,
    ))
}

/// Stop line (along coordinate) for a vehicle travelling `dir` towards
/// the crosswalk spanning `span`.
fn stop_line(span: (f64, f64), dir: f64) -> f64 {
    if dir > 0.0 {
        span.0 - STOP_LINE_GAP
    } else {
        span.1 + STOP_LINE_GAP
    }
}

fn simulate_scene(
    world: &World,
    config: &WorldConfig,
    index: usize,
    kinds: &[VehicleKind],
    rng: &mut ChaCha8Rng,
) -> (Scene, Vec<BehaviorLabel>, BTreeSet<usize>) {
    let frames = config.frames_per_scene;
    let dt = 1.0 / DEFAULT_FRAME_RATE_HZ;
    let roads = &world.roads;
    let spans: Vec<(f64, f64)> = world
        .map
        .crosswalks
        .iter()
        .zip(&world.crosswalk_roads)
        .map(|(c, &r)| roads[r].crossing_span(c).expect("validated crosswalk"))
        .collect();

    let mut vehicles: Vec<SimVehicle> = kinds
        .iter()
        .map(|&kind| {
            let road = rng.random_range(0..roads.len());
            let r = &roads[road];
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let len = r.end - r.start;
            // Moving vehicles start in the upstream part of their lane so
            // their tracks are long enough to window.
            let travelled = match kind {
                VehicleKind::Parked => rng.random_range(0.05..0.95) * len,
                _ => rng.random_range(0.0..0.6) * len,
            };
            let along = if dir > 0.0 { r.start + travelled } else { r.end - travelled };
            let cruise = match kind {
                VehicleKind::Parked => 0.0,
                VehicleKind::Cruising => rng.random_range(CRUISE_SPEED.0..CRUISE_SPEED.1).min(r.speed_limit),
                VehicleKind::Speeding => rng.random_range(HIGH_SPEED.0..HIGH_SPEED.1),
            };
            SimVehicle {
                road,
                dir,
                along,
                speed: cruise,
                cruise,
                kind,
                yielded: false,
                active: true,
                positions: Vec::with_capacity(frames),
            }
        })
        .collect();

    let crossings_ok = !spans.is_empty();
    let mut pedestrians: Vec<SimPedestrian> = (0..config.pedestrians_per_scene)
        .filter(|_| crossings_ok)
        .map(|_| {
            let crosswalk = rng.random_range(0..spans.len());
            let road = world.crosswalk_roads[crosswalk];
            let span = spans[crosswalk];
            let center = 0.5 * (span.0 + span.1);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let distance = rng.random_range(PED_SPAWN_DISTANCE.0..PED_SPAWN_DISTANCE.1);
            let r = &roads[road];
            let along = (center - dir * distance).clamp(r.start, r.end);
            SimPedestrian {
                crosswalk,
                road,
                dir,
                along,
                side: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                lateral: 0.0,
                crossing_at: center,
                will_cross: rng.random_bool(config.crossing_probability),
                spawn_frame: rng.random_range(0..frames - WINDOW_FRAMES + 1),
                phase: Phase::Waiting,
                first_frame: 0,
                positions: Vec::new(),
            }
        })
        .collect();

    let step = PEDESTRIAN_SPEED * dt;
    for frame in 0..frames {
        // Pedestrians move first; vehicles react to their new positions.
        for p in pedestrians.iter_mut() {
            let r = &roads[p.road];
            let sidewalk = r.half_width + SIDEWALK_OFFSET;
            match p.phase {
                Phase::Waiting if frame == p.spawn_frame => {
                    p.phase = Phase::Approach;
                    p.first_frame = frame;
                    p.lateral = p.side * sidewalk;
                }
                Phase::Waiting | Phase::Gone => continue,
                Phase::Approach => {
                    let left = (p.crossing_at - p.along) * p.dir;
                    if p.will_cross && left <= step {
                        p.along = p.crossing_at;
                        p.phase = Phase::Crossing;
                    } else {
                        p.along += p.dir * step;
                        if p.along * p.dir > p.crossing_at * p.dir {
                            p.phase = Phase::Depart;
                        }
                    }
                }
                Phase::Crossing => {
                    let target = -p.side * sidewalk;
                    let delta = target - p.lateral;
                    if delta.abs() <= step {
                        p.lateral = target;
                        p.side = -p.side;
                        p.phase = Phase::Depart;
                    } else {
                        p.lateral += step * delta.signum();
                    }
                }
                Phase::Depart => p.along += p.dir * step,
            }
            let pos = r.point(p.along, p.lateral);
            if !world.map.extents.contains(pos) || p.along < r.start || p.along > r.end {
                p.phase = Phase::Gone;
                continue;
            }
            p.positions.push(pos);
        }

        let mut occupied = vec![false; spans.len()];
        for c in pedestrians.iter().filter_map(SimPedestrian::occupies) {
            occupied[c] = true;
        }

        for v in vehicles.iter_mut().filter(|v| v.active) {
            let r = &roads[v.road];
            if v.kind != VehicleKind::Parked {
                let u = v.along * v.dir;
                // Nearest stop line ahead on this road that guards an
                // occupied crosswalk.
                let blocking = spans
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| world.crosswalk_roads[c] == v.road && occupied[c])
                    .map(|(_, &span)| stop_line(span, v.dir) * v.dir - u)
                    .filter(|&d| d >= -1e-9)
                    .fold(f64::INFINITY, f64::min);
                let speed = v.speed;
                let must_stop = blocking.is_finite()
                    && blocking <= speed * speed / (2.0 * BRAKE_DECEL) + speed * dt + 1.0
                    && blocking >= speed * speed / (2.0 * MAX_BRAKE_DECEL);
                let (new_speed, mut advance) = if must_stop {
                    v.yielded = true;
                    let ns = (speed - BRAKE_DECEL * dt).max(0.0);
                    (ns, 0.5 * (speed + ns) * dt)
                } else {
                    let ns = (speed + ACCEL * dt).min(v.cruise);
                    (ns, 0.5 * (speed + ns) * dt)
                };
                let mut ns = new_speed;
                if must_stop && advance >= blocking {
                    advance = blocking.max(0.0);
                    ns = 0.0;
                }
                v.speed = ns;
                v.along += v.dir * advance;
                if v.along < r.start || v.along > r.end {
                    v.active = false;
                    continue;
                }
            }
            v.positions.push(r.point(v.along, r.lane_offset(v.dir)));
        }
    }

    let scene_id = format!("scene-{index:04}");
    let mut tracks = Vec::new();
    let mut labels = Vec::new();
    let mut crossings = BTreeSet::new();
    for (i, v) in vehicles.into_iter().enumerate() {
        if v.positions.is_empty() {
            continue;
        }
        let agent_id = format!("veh-{i:03}");
        let behavior = match v.kind {
            VehicleKind::Parked => Behavior::Stationary,
            _ if v.yielded => Behavior::Yielding,
            VehicleKind::Speeding => Behavior::HighSpeed,
            VehicleKind::Cruising => Behavior::Cruising,
        };
        labels.push(BehaviorLabel {
            scene_id: scene_id.clone(),
            agent_id: agent_id.clone(),
            behavior,
            road: Some(v.road),
        });
        tracks.push(Track {
            agent_id,
            agent_class: AgentClass::Vehicle,
            first_frame: 0,
            positions: v.positions,
            is_stationary_track: false,
        });
    }
    for (i, p) in pedestrians.into_iter().enumerate() {
        if p.positions.is_empty() {
            continue;
        }
        if p.will_cross {
            crossings.insert(p.crosswalk);
        }
        let agent_id = format!("ped-{i:03}");
        labels.push(BehaviorLabel {
            scene_id: scene_id.clone(),
            agent_id: agent_id.clone(),
            behavior: if p.will_cross { Behavior::Crossing } else { Behavior::Cruising },
            road: Some(p.road),
        });
        tracks.push(Track {
            agent_id,
            agent_class: AgentClass::Pedestrian,
            first_frame: p.first_frame as i64,
            positions: p.positions,
            is_stationary_track: false,
        });
    }
    (
        Scene {
            scene_id,
            map_id: world.map.map_id.clone(),
            tracks,
        },
        labels,
        crossings,
    )
}
