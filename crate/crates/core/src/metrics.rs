//! Per-example scoring and stratified aggregation.
//!
//! Horizons are whole seconds 1..=4, i.e. future steps 2, 4, 6 and 8 at the
//! 2 Hz annotation rate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AgentClass, MapSpec, ModelClass, PredictionExample, FUTURE_FRAMES};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::predictor::{build_features, forward_input, sample_from_prediction, ModelParams, Variant};
use crate::riskmap::{assign_risk_stratum, RiskHeatmap, RiskStratum};

pub const HORIZONS_S: [usize; 4] = [1, 2, 3, 4];
pub const HIGH_SPEED_THRESHOLD_MPS: f64 = 14.0;
pub const STATIONARY_WINDOW_M: f64 = 1.0;
/// Lower bound on the per-dimension KDE bandwidth (meters).
pub const KDE_BANDWIDTH_FLOOR: f64 = 1e-3;

fn horizon_steps(horizon_s: usize) -> Result<usize> {
    let steps = 2 * horizon_s;
    if horizon_s == 0 || steps > FUTURE_FRAMES {
        return Err(Error::Metric(format!(
            "horizon {horizon_s} s is outside the {FUTURE_FRAMES}-step future"
        )));
    }
    Ok(steps)
}

/// Euclidean error at the horizon step.
pub fn fde_at(predicted: &[Vec2; FUTURE_FRAMES], future: &[Vec2; FUTURE_FRAMES], horizon_s: usize) -> Result<f64> {
    let t = horizon_steps(horizon_s)? - 1;
    Ok(predicted[t].dist(future[t]))
}

/// Mean over steps `1..=2·horizon_s` of the negative log density of the
/// ground truth under a product-Gaussian KDE of the sample positions, with
/// Scott bandwidth `n^(-1/6)·std` per dimension.
pub fn kde_nll_at(samples: &[[Vec2; FUTURE_FRAMES]], future: &[Vec2; FUTURE_FRAMES], horizon_s: usize) -> Result<f64> {
    let steps = horizon_steps(horizon_s)?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::Metric(format!("KDE needs at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let factor = nf.powf(-1.0 / 6.0);
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(n);
    for t in 0..steps {
        let (mut mx, mut my) = (0.0, 0.0);
        for s in samples {
            mx += s[t].x;
            my += s[t].y;
        }
        mx /= nf;
        my /= nf;
        let (mut vx, mut vy) = (0.0, 0.0);
        for s in samples {
            vx += (s[t].x - mx).powi(2);
            vy += (s[t].y - my).powi(2);
        }
        let hx = (factor * (vx / (nf - 1.0)).sqrt()).max(KDE_BANDWIDTH_FLOOR);
        let hy = (factor * (vy / (nf - 1.0)).sqrt()).max(KDE_BANDWIDTH_FLOOR);
        let g = future[t];
        terms.clear();
        terms.extend(samples.iter().map(|s| {
            let zx = (g.x - s[t].x) / hx;
            let zy = (g.y - s[t].y) / hy;
            -0.5 * (zx * zx + zy * zy)
        }));
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let log_density = lse - nf.ln() - (std::f64::consts::TAU * hx * hy).ln();
        total -= log_density;
    }
    Ok(total / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedStratum {
    Stationary,
    NonStationary,
    HighSpeed,
}

impl SpeedStratum {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeedStratum::Stationary => "stationary",
            SpeedStratum::NonStationary => "non_stationary",
            SpeedStratum::HighSpeed => "high_speed",
        }
    }
}

impl FromStr for SpeedStratum {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stationary" => Ok(SpeedStratum::Stationary),
            "non_stationary" => Ok(SpeedStratum::NonStationary),
            "high_speed" => Ok(SpeedStratum::HighSpeed),
            other => Err(format!("unknown speed stratum {other:?}")),
        }
    }
}

/// Stationary by window path length, otherwise high-speed by history
/// speed, otherwise non-stationary. Vehicles only.
pub fn classify_speed_stratum(example: &PredictionExample, threshold: f64) -> Result<SpeedStratum> {
    if example.agent_class != AgentClass::Vehicle {
        return Err(Error::Domain(format!(
            "speed strata apply to vehicles, got {}",
            example.agent_class
        )));
    }
    Ok(if example.window_path_length < STATIONARY_WINDOW_M {
        SpeedStratum::Stationary
    } else if example.max_history_speed > threshold {
        SpeedStratum::HighSpeed
    } else {
        SpeedStratum::NonStationary
    })
}

/// True when the final predicted point lies outside every (closed)
/// drivable rectangle.
pub fn boundary_violation(predicted: &[Vec2; FUTURE_FRAMES], map: &MapSpec) -> bool {
    !map.is_drivable(predicted[FUTURE_FRAMES - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub scene_id: String,
    pub agent_id: String,
    pub t_ref: i64,
    pub agent_class: AgentClass,
    /// At 1, 2, 3 and 4 s.
    pub fde: [f64; 4],
    pub kde_nll: [f64; 4],
    /// Vehicles only.
    pub boundary_violation: Option<bool>,
    /// Vehicles only.
    pub speed_stratum: Option<SpeedStratum>,
    pub risk_stratum: RiskStratum,
    pub weight: f64,
    pub bin: (usize, usize),
    pub max_history_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub kde_samples: usize,
    pub seed: u64,
    pub high_speed_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            kde_samples: 64,
            seed: 0,
            high_speed_threshold: HIGH_SPEED_THRESHOLD_MPS,
        }
    }
}

/// Scores one example against a trained model. `index` keys the sampling
/// stream.
pub fn score_example(
    model: &ModelParams,
    example: &PredictionExample,
    index: u64,
    heatmap: &RiskHeatmap,
    map: &MapSpec,
    cfg: &ScoringConfig,
) -> Result<ExampleMetrics> {
    use rand::SeedableRng;
    let pred = forward_input(model, &build_features(example));
    let best = pred.mode_trajectories[pred.most_likely_mode()];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let samples = sample_from_prediction(&pred, cfg.kde_samples, &mut rng);

    let mut fde = [0.0; 4];
    let mut kde = [0.0; 4];
    for (i, &h) in HORIZONS_S.iter().enumerate() {
        fde[i] = fde_at(&best, &example.future, h)?;
        kde[i] = kde_nll_at(&samples, &example.future, h)?;
    }
    let weight = heatmap.lookup_weight(example.current_position);
    let is_vehicle = example.agent_class == AgentClass::Vehicle;
    Ok(ExampleMetrics {
        scene_id: example.scene_id.clone(),
        agent_id: example.agent_id.clone(),
        t_ref: example.t_ref,
        agent_class: example.agent_class,
        fde,
        kde_nll: kde,
        boundary_violation: is_vehicle.then(|| boundary_violation(&best, map)),
        speed_stratum: if is_vehicle {
            Some(classify_speed_stratum(example, cfg.high_speed_threshold)?)
        } else {
            None
        },
        risk_stratum: assign_risk_stratum(weight, example.agent_class)?,
        weight,
        bin: heatmap.bin(example.current_position),
        max_history_speed: example.max_history_speed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    All,
    Stationary,
    NonStationary,
    HighSpeed,
    Low,
    Medium,
    High,
}

impl Stratum {
    pub const VEHICLE: [Stratum; 7] = [
        Stratum::All,
        Stratum::Stationary,
        Stratum::NonStationary,
        Stratum::HighSpeed,
        Stratum::Low,
        Stratum::Medium,
        Stratum::High,
    ];
    pub const PEDESTRIAN: [Stratum; 3] = [Stratum::All, Stratum::Low, Stratum::High];

    pub fn for_class(class: ModelClass) -> &'static [Stratum] {
        match class {
            ModelClass::Vehicle => &Self::VEHICLE,
            ModelClass::Pedestrian => &Self::PEDESTRIAN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Stationary => "stationary",
            Stratum::NonStationary => "non_stationary",
            Stratum::HighSpeed => "high_speed",
            Stratum::Low => "low",
            Stratum::Medium => "medium",
            Stratum::High => "high",
        }
    }

    /// Membership; `non_stationary` includes the high-speed examples.
    pub fn contains(self, m: &ExampleMetrics) -> bool {
        match self {
            Stratum::All => true,
            Stratum::Stationary => m.speed_stratum == Some(SpeedStratum::Stationary),
            Stratum::NonStationary => matches!(
                m.speed_stratum,
                Some(SpeedStratum::NonStationary | SpeedStratum::HighSpeed)
            ),
            Stratum::HighSpeed => m.speed_stratum == Some(SpeedStratum::HighSpeed),
            Stratum::Low => m.risk_stratum == RiskStratum::Low,
            Stratum::Medium => m.risk_stratum == RiskStratum::Medium,
            Stratum::High => m.risk_stratum == RiskStratum::High,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stratum {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stratum::VEHICLE
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stratum {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fde,
    KdeNll,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Fde => "fde",
            Metric::KdeNll => "kde_nll",
        }
    }

    fn value(self, m: &ExampleMetrics, horizon_idx: usize) -> f64 {
        match self {
            Metric::Fde => m.fde[horizon_idx],
            Metric::KdeNll => m.kde_nll[horizon_idx],
        }
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fde" => Ok(Metric::Fde),
            "kde_nll" => Ok(Metric::KdeNll),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: Option<f64>,
    pub count: usize,
}

/// Stratified means for one (agent class, variant).
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedReport {
    pub agent_class: ModelClass,
    pub variant: Variant,
    pub cells: BTreeMap<(Metric, usize, Stratum), Cell>,
    /// Vehicles only.
    pub boundary_violation_rate: Option<f64>,
}

impl StratifiedReport {
    pub fn mean(&self, metric: Metric, horizon_s: usize, stratum: Stratum) -> Option<f64> {
        self.cells.get(&(metric, horizon_s, stratum)).and_then(|c| c.mean)
    }

    pub fn count(&self, stratum: Stratum) -> usize {
        self.cells
            .get(&(Metric::Fde, HORIZONS_S[0], stratum))
            .map_or(0, |c| c.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCell {
    pub bin_x: usize,
    pub bin_y: usize,
    pub mean_fde_3s: f64,
    pub count: usize,
}

/// Per-bin mean vehicle FDE@3s for one variant, ordered by (bin_y, bin_x).
#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    pub variant: Variant,
    pub bins: Vec<BinCell>,
}

impl BinTable {
    pub fn get(&self, bin_x: usize, bin_y: usize) -> Option<&BinCell> {
        self.bins.iter().find(|b| b.bin_x == bin_x && b.bin_y == bin_y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Vehicle report first, then pedestrian.
    pub reports: Vec<StratifiedReport>,
    pub bins: BinTable,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Cell {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    Cell {
        mean: (count > 0).then(|| sum / count as f64),
        count,
    }
}

/// Arithmetic means per stratum in input order, plus per-bin vehicle
/// FDE@3s means.
pub fn aggregate_report(metrics: &[ExampleMetrics], variant: Variant) -> Aggregate {
    let mut reports = Vec::new();
    for class in ModelClass::ALL {
        let members: Vec<&ExampleMetrics> = metrics
            .iter()
            .filter(|m| m.agent_class.model_class() == class)
            .collect();
        let mut cells = BTreeMap::new();
        for metric in [Metric::Fde, Metric::KdeNll] {
            for (hi, &h) in HORIZONS_S.iter().enumerate() {
                for &stratum in Stratum::for_class(class) {
                    let cell = mean_of(
                        members
                            .iter()
                            .filter(|m| stratum.contains(m))
                            .map(|m| metric.value(m, hi)),
                    );
                    cells.insert((metric, h, stratum), cell);
                }
            }
        }
        let boundary_violation_rate = match class {
            ModelClass::Vehicle => {
                mean_of(members.iter().filter_map(|m| m.boundary_violation).map(|b| b as u8 as f64)).mean
            }
            ModelClass::Pedestrian => None,
        };
        reports.push(StratifiedReport {
            agent_class: class,
            variant,
            cells,
            boundary_violation_rate,
        });
    }

    let mut per_bin: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for m in metrics.iter().filter(|m| m.agent_class == AgentClass::Vehicle) {
        let e = per_bin.entry((m.bin.1, m.bin.0)).or_insert((0.0, 0));
        e.0 += m.fde[2];
        e.1 += 1;
    }
    let bins = per_bin
        .into_iter()
        .map(|((y, x), (sum, count))| BinCell {
            bin_x: x,
            bin_y: y,
            mean_fde_3s: sum / count as f64,
            count,
        })
        .collect();
    Aggregate {
        reports,
        bins: BinTable { variant, bins },
    }
}

fn push_comments(out: &mut Vec<u8>, comments: &[String]) {
    for c in comments {
        writeln!(out, "# {c}").expect("write to Vec");
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const BOUNDARY_METRIC: &str = "boundary_violation_rate";

/// `agent_class,variant,metric,horizon_s,stratum,mean,count`; empty
/// strata have an empty mean. The vehicle boundary-violation rate is
/// appended as metric `boundary_violation_rate` at the 4 s horizon.
pub fn write_report_csv(reports: &[StratifiedReport], path: &Path, comments: &[String]) -> Result<()> {
    let mut out = Vec::new();
    push_comments(&mut out, comments);
    writeln!(out, "agent_class,variant,metric,horizon_s,stratum,mean,count").expect("write to Vec");
    for r in reports {
        for (&(metric, h, stratum), cell) in &r.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.agent_class,
                r.variant,
                metric.as_str(),
                h,
                stratum,
                opt(cell.mean),
                cell.count
            )
            .expect("write to Vec");
        }
        if r.agent_class == ModelClass::Vehicle {
            writeln!(
                out,
                "{},{},{BOUNDARY_METRIC},4,all,{},{}",
                r.agent_class,
                r.variant,
                opt(r.boundary_violation_rate),
                r.count(Stratum::All)
            )
            .expect("write to Vec");
        }
    }
    write_file(path, out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("field {i} {raw:?}: {e}"),
    })
}

fn opt_field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(_) => field(rec, i, line).map(Some),
    }
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

pub fn read_report_csv(path: &Path) -> Result<Vec<StratifiedReport>> {
    let mut reader = csv_reader(path)?;
    let mut reports: Vec<StratifiedReport> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        let class: ModelClass = field(&rec, 0, line)?;
        let variant: Variant = field(&rec, 1, line)?;
        let idx = match reports.iter().position(|r| r.agent_class == class && r.variant == variant) {
            Some(i) => i,
            None => {
                reports.push(StratifiedReport {
                    agent_class: class,
                    variant,
                    cells: BTreeMap::new(),
                    boundary_violation_rate: None,
                });
                reports.len() - 1
            }
        };
        let mean = opt_field(&rec, 5, line)?;
        if &rec[2] == BOUNDARY_METRIC {
            reports[idx].boundary_violation_rate = mean;
            continue;
        }
        let metric: Metric = field(&rec, 2, line)?;
        let h: usize = field(&rec, 3, line)?;
        let stratum: Stratum = field(&rec, 4, line)?;
        let count: usize = field(&rec, 6, line)?;
        reports[idx].cells.insert((metric, h, stratum), Cell { mean, count });
    }
    Ok(reports)
}

/// `variant,bin_x,bin_y,mean_fde_3s,count`
pub fn write_bins_csv(tables: &[BinTable], path: &Path, comments: &[String]) -> Result<()> {
    let mut out = Vec::new();
    push_comments(&mut out, comments);
    writeln!(out, "variant,bin_x,bin_y,mean_fde_3s,count").expect("write to Vec");
    for t in tables {
        for b in &t.bins {
            writeln!(out, "{},{},{},{},{}", t.variant, b.bin_x, b.bin_y, b.mean_fde_3s, b.count)
                .expect("write to Vec");
        }
    }
    write_file(path, out)
}

pub fn read_bins_csv(path: &Path) -> Result<Vec<BinTable>> {
    let mut reader = csv_reader(path)?;
    let mut tables: Vec<BinTable> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        let variant: Variant = field(&rec, 0, line)?;
        let cell = BinCell {
            bin_x: field(&rec, 1, line)?,
            bin_y: field(&rec, 2, line)?,
            mean_fde_3s: field(&rec, 3, line)?,
            count: field(&rec, 4, line)?,
        };
        match tables.iter_mut().find(|t| t.variant == variant) {
            Some(t) => t.bins.push(cell),
            None => tables.push(BinTable {
                variant,
                bins: vec![cell],
            }),
        }
    }
    Ok(tables)
}

const SCORES_HEADER: &str = "scene_id,agent_id,t_ref,agent_class,weight,bin_x,bin_y,max_history_speed,speed_stratum,risk_stratum,boundary_violation,fde_1s,fde_2s,fde_3s,fde_4s,kde_nll_1s,kde_nll_2s,kde_nll_3s,kde_nll_4s";

/// Per-example scores, one row per example in evaluation order.
pub fn write_scores_csv(metrics: &[ExampleMetrics], path: &Path, comments: &[String]) -> Result<()> {
    let mut out = Vec::new();
    push_comments(&mut out, comments);
    writeln!(out, "{SCORES_HEADER}").expect("write to Vec");
    for m in metrics {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.scene_id,
            m.agent_id,
            m.t_ref,
            m.agent_class,
            m.weight,
            m.bin.0,
            m.bin.1,
            m.max_history_speed,
            m.speed_stratum.map_or("", |s| s.as_str()),
            m.risk_stratum,
            m.boundary_violation.map_or(String::new(), |b| b.to_string()),
        )
        .expect("write to Vec");
        for v in m.fde.iter().chain(&m.kde_nll) {
            write!(out, ",{v}").expect("write to Vec");
        }
        out.push(b'\n');
    }
    write_file(path, out)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ExampleMetrics>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        let mut fde = [0.0; 4];
        let mut kde = [0.0; 4];
        for i in 0..4 {
            fde[i] = field(&rec, 11 + i, line)?;
            kde[i] = field(&rec, 15 + i, line)?;
        }
        out.push(ExampleMetrics {
            scene_id: rec[0].to_string(),
            agent_id: rec[1].to_string(),
            t_ref: field(&rec, 2, line)?,
            agent_class: field(&rec, 3, line)?,
            weight: field(&rec, 4, line)?,
            bin: (field(&rec, 5, line)?, field(&rec, 6, line)?),
            max_history_speed: field(&rec, 7, line)?,
            speed_stratum: match &rec[8] {
                "" => None,
                s => Some(s.parse().map_err(|e: String| Error::Parse { line, message: e })?),
            },
            risk_stratum: field(&rec, 9, line)?,
            boundary_violation: match &rec[10] {
                "" => None,
                s => Some(field::<bool>(&rec, 10, line).map_err(|_| Error::Parse {
                    line,
                    message: format!("bad boundary_violation {s:?}"),
                })?),
            },
            fde,
            kde_nll: kde,
        });
    }
    Ok(out)
}
