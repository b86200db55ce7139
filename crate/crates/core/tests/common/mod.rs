//! Fixtures shared by the golden-file tests and the acceptance harness.
#![allow(dead_code)]

use std::path::PathBuf;

use riskweave::dataset::AgentClass;
use riskweave::geometry::Extents;
use riskweave::metrics::*;
use riskweave::predictor::Variant;
use riskweave::riskmap::RiskStratum;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn example(i: usize, class: AgentClass, speed: SpeedStratum, risk: RiskStratum, offset: f64) -> ExampleMetrics {
    let base = 0.5 + 0.25 * i as f64 + offset;
    ExampleMetrics {
        scene_id: format!("scene-{:04}", i % 3),
        agent_id: format!("agent-{i:03}"),
        t_ref: 4 + i as i64,
        agent_class: class,
        fde: [base, 2.0 * base, 3.0 * base, 4.0 * base],
        kde_nll: [base - 1.0, base, base + 0.5, base + 1.0],
        boundary_violation: (class == AgentClass::Vehicle).then_some(i.is_multiple_of(5)),
        speed_stratum: (class == AgentClass::Vehicle).then_some(speed),
        risk_stratum: risk,
        weight: 1.0,
        bin: (i % 4, (i / 4) % 4),
        max_history_speed: 1.0 + i as f64,
    }
}

pub fn scored(offset: f64) -> Vec<ExampleMetrics> {
    use RiskStratum::*;
    use SpeedStratum::*;
    let v = AgentClass::Vehicle;
    let p = AgentClass::Pedestrian;
    vec![
        example(0, v, Stationary, Low, 0.0),
        example(1, v, NonStationary, Low, offset),
        example(2, v, HighSpeed, Medium, 2.0 * offset),
        example(3, v, HighSpeed, High, -offset),
        example(4, v, NonStationary, High, offset),
        example(5, v, Stationary, Low, 0.0),
        example(6, p, NonStationary, Low, offset),
        example(7, p, NonStationary, High, -offset),
        example(8, p, NonStationary, Low, 0.0),
    ]
}

pub fn reports() -> Vec<StratifiedReport> {
    Variant::ALL
        .iter()
        .enumerate()
        .flat_map(|(k, &v)| aggregate_report(&scored(0.1 * k as f64), v).reports)
        .collect()
}

pub fn clip_fixture() -> (BinTable, BinTable) {
    let diffs = [-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.5];
    let cell = |i: usize, fde: f64| BinCell {
        bin_x: i % 4,
        bin_y: i / 4,
        mean_fde_3s: fde,
        count: 1,
    };
    let baseline = BinTable {
        variant: Variant::Baseline,
        bins: (0..8).map(|i| cell(i, 5.0)).collect(),
    };
    // Bin 7 has no variant value and stays unpainted.
    let variant = BinTable {
        variant: Variant::LocationRisk,
        bins: diffs.iter().enumerate().map(|(i, d)| cell(i, 5.0 + d)).collect(),
    };
    (variant, baseline)
}

pub const EXTENTS: Extents = Extents {
    x_min: 0.0,
    y_min: 0.0,
    x_max: 8.0,
    y_max: 8.0,
};

