//! SVG figures and Markdown result tables.
//!
//! Everything here is a pure function of its numeric inputs; numbers are
//! printed with fixed precision so output bytes are stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ModelClass;
use crate::error::{Error, Result};
use crate::geometry::Extents;
use crate::metrics::{BinTable, ExampleMetrics, Metric, StratifiedReport, Stratum, HORIZONS_S};
use crate::predictor::Variant;
use crate::riskmap::{RiskHeatmap, MAX_WEIGHT, MIN_WEIGHT, QUARTER_BOUNDS};

/// Plot area edge in pixels.
const PLOT_PX: f64 = 500.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 52.0;
const COLORBAR_GAP: f64 = 24.0;
const COLORBAR_W: f64 = 18.0;
const COLORBAR_STEPS: usize = 64;
/// Canvas colour behind bins that are left unpainted.
const UNPAINTED: &str = "#d9d9d9";
const DIFF_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

fn lerp_stops(stops: &[(f64, Rgb)], t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let i = stops.windows(2).position(|w| t <= w[1].0).unwrap_or(stops.len() - 2);
    let (t0, a) = stops[i];
    let (t1, b) = stops[i + 1];
    let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * f).round() as u8;
    Rgb(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Dark-to-bright sequential map (viridis anchor colours) over [0, 1].
pub fn sequential_color(t: f64) -> Rgb {
    const STOPS: [(f64, Rgb); 5] = [
        (0.0, Rgb(68, 1, 84)),
        (0.25, Rgb(59, 82, 139)),
        (0.5, Rgb(33, 145, 140)),
        (0.75, Rgb(94, 201, 98)),
        (1.0, Rgb(253, 231, 37)),
    ];
    lerp_stops(&STOPS, t)
}

pub fn weight_color(weight: f64) -> Rgb {
    sequential_color((weight - MIN_WEIGHT) / (MAX_WEIGHT - MIN_WEIGHT))
}

/// Blue (improvement) through white to red (regression); saturates
/// outside ±1 m.
pub fn diverging_color(diff: f64) -> Rgb {
    const STOPS: [(f64, Rgb); 3] = [(0.0, Rgb(33, 102, 172)), (0.5, Rgb(255, 255, 255)), (1.0, Rgb(178, 24, 43))];
    let d = diff.clamp(-DIFF_CLIP, DIFF_CLIP);
    lerp_stops(&STOPS, 0.5 + 0.5 * d / DIFF_CLIP)
}

/// Short decimal label: integers without a fraction, otherwise up to two
/// decimals with trailing zeros trimmed.
fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct GridFrame {
    extents: Extents,
    grid_n: usize,
}

impl GridFrame {
    fn cell_px(&self) -> f64 {
        PLOT_PX / self.grid_n as f64
    }

    fn cell_rect(&self, out: &mut String, ix: usize, iy: usize, fill: &str) {
        let c = self.cell_px();
        let x = MARGIN_LEFT + ix as f64 * c;
        let y = MARGIN_TOP + (self.grid_n - 1 - iy) as f64 * c;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{c:.3}" height="{c:.3}" fill="{fill}"/>"#
        );
    }

    /// Frame, ticks and metre labels for both axes.
    fn axes(&self, out: &mut String) {
        let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP);
        let _ = writeln!(
            out,
            r#"<rect x="{x0}" y="{y0}" width="{PLOT_PX}" height="{PLOT_PX}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        let e = &self.extents;
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let px = x0 + f * PLOT_PX;
            let py = y0 + PLOT_PX - f * PLOT_PX;
            let bottom = y0 + PLOT_PX;
            let _ = writeln!(
                out,
                r#"<line x1="{px:.3}" y1="{bottom}" x2="{px:.3}" y2="{:.3}" stroke="black"/>"#,
                bottom + 5.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{px:.3}" y="{:.3}" font-size="11" text-anchor="middle">{}</text>"#,
                bottom + 18.0,
                label(e.x_min + f * e.width())
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{py:.3}" x2="{x0}" y2="{py:.3}" stroke="black"/>"#,
                x0 - 5.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                py + 4.0,
                label(e.y_min + f * e.height())
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">x (m)</text>"#,
            x0 + PLOT_PX / 2.0,
            y0 + PLOT_PX + 40.0
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.3}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.3})">y (m)</text>"#,
            y0 + PLOT_PX / 2.0,
            y0 + PLOT_PX / 2.0
        );
    }
}

/// Vertical colour bar from `lo` (bottom) to `hi` (top).
fn colorbar(out: &mut String, lo: f64, hi: f64, ticks: &[f64], title: &str, color: impl Fn(f64) -> Rgb) {
    let x = MARGIN_LEFT + PLOT_PX + COLORBAR_GAP;
    let step = PLOT_PX / COLORBAR_STEPS as f64;
    let _ = writeln!(out, r#"<g id="colorbar">"#);
    for i in 0..COLORBAR_STEPS {
        let v = lo + (hi - lo) * (i as f64 + 0.5) / COLORBAR_STEPS as f64;
        let y = MARGIN_TOP + PLOT_PX - (i + 1) as f64 * step;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y:.3}" width="{COLORBAR_W}" height="{step:.3}" fill="{}"/>"#,
            color(v).hex()
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{x}" y="{MARGIN_TOP}" width="{COLORBAR_W}" height="{PLOT_PX}" fill="none" stroke="black"/>"#
    );
    for &t in ticks {
        let y = MARGIN_TOP + PLOT_PX - (t - lo) / (hi - lo) * PLOT_PX;
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="11">{}</text>"#,
            x + COLORBAR_W + 4.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">{title}</text>"#,
        x + COLORBAR_W / 2.0,
        MARGIN_TOP - 10.0
    );
    let _ = writeln!(out, "</g>");
}

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn grid_canvas_size() -> (f64, f64) {
    (
        MARGIN_LEFT + PLOT_PX + COLORBAR_GAP + COLORBAR_W + 56.0,
        MARGIN_TOP + PLOT_PX + MARGIN_BOTTOM,
    )
}

pub fn weight_heatmap_svg(heatmap: &RiskHeatmap) -> String {
    let frame = GridFrame {
        extents: heatmap.extents,
        grid_n: heatmap.grid_n,
    };
    let (w, h) = grid_canvas_size();
    let mut out = String::new();
    svg_open(&mut out, w, h, &format!("Location-risk weights, {}", heatmap.map_id));
    let _ = writeln!(out, r#"<g id="cells" shape-rendering="crispEdges">"#);
    for iy in 0..heatmap.grid_n {
        for ix in 0..heatmap.grid_n {
            frame.cell_rect(&mut out, ix, iy, &weight_color(heatmap.weight_at(ix, iy)).hex());
        }
    }
    let _ = writeln!(out, "</g>");
    frame.axes(&mut out);
    let mut ticks = vec![MIN_WEIGHT];
    ticks.extend(QUARTER_BOUNDS);
    ticks.push(MAX_WEIGHT);
    colorbar(&mut out, MIN_WEIGHT, MAX_WEIGHT, &ticks, "weight", weight_color);
    out.push_str("</svg>\n");
    out
}

pub fn render_weight_heatmap_svg(heatmap: &RiskHeatmap, path: &Path) -> Result<()> {
    write_text(path, &weight_heatmap_svg(heatmap))
}

/// Per-bin `variant − baseline` mean FDE@3s; `None` where either table
/// lacks the bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffColorPlot {
    pub extents: Extents,
    pub grid_n: usize,
    pub variant: Variant,
    /// Row-major (`iy * grid_n + ix`) raw differences in meters.
    pub cells: Vec<Option<f64>>,
}

impl DiffColorPlot {
    pub fn from_tables(variant: &BinTable, baseline: &BinTable, extents: Extents, grid_n: usize) -> Result<Self> {
        for t in [variant, baseline] {
            if let Some(b) = t.bins.iter().find(|b| b.bin_x >= grid_n || b.bin_y >= grid_n) {
                return Err(Error::Shape(format!(
                    "bin ({}, {}) of the {} table lies outside a {grid_n}x{grid_n} grid",
                    b.bin_x, b.bin_y, t.variant
                )));
            }
        }
        let base: BTreeMap<(usize, usize), f64> =
            baseline.bins.iter().map(|b| ((b.bin_x, b.bin_y), b.mean_fde_3s)).collect();
        let mut cells = vec![None; grid_n * grid_n];
        for b in &variant.bins {
            if let Some(m) = base.get(&(b.bin_x, b.bin_y)) {
                cells[b.bin_y * grid_n + b.bin_x] = Some(b.mean_fde_3s - m);
            }
        }
        Ok(DiffColorPlot {
            extents,
            grid_n,
            variant: variant.variant,
            cells,
        })
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        self.cells[iy * self.grid_n + ix]
    }

    pub fn to_svg(&self) -> String {
        let frame = GridFrame {
            extents: self.extents,
            grid_n: self.grid_n,
        };
        let (w, h) = grid_canvas_size();
        let mut out = String::new();
        svg_open(
            &mut out,
            w,
            h,
            &format!("FDE@3s difference, {} minus baseline", self.variant.title()),
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{PLOT_PX}" height="{PLOT_PX}" fill="{UNPAINTED}"/>"#
        );
        let _ = writeln!(out, r#"<g id="cells" shape-rendering="crispEdges">"#);
        for iy in 0..self.grid_n {
            for ix in 0..self.grid_n {
                if let Some(d) = self.get(ix, iy) {
                    frame.cell_rect(&mut out, ix, iy, &diverging_color(d).hex());
                }
            }
        }
        let _ = writeln!(out, "</g>");
        frame.axes(&mut out);
        colorbar(
            &mut out,
            -DIFF_CLIP,
            DIFF_CLIP,
            &[-1.0, -0.5, 0.0, 0.5, 1.0],
            "ΔFDE (m)",
            diverging_color,
        );
        out.push_str("</svg>\n");
        out
    }
}

pub fn render_fde_diff_colorplot(
    variant_bins: &BinTable,
    baseline_bins: &BinTable,
    extents: Extents,
    grid_n: usize,
    path: &Path,
) -> Result<()> {
    let plot = DiffColorPlot::from_tables(variant_bins, baseline_bins, extents, grid_n)?;
    write_text(path, &plot.to_svg())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarKey {
    /// Maximum history speed (m/s).
    Speed,
    /// Location-risk weight at the current position.
    Weight,
}

impl BarKey {
    pub fn default_edges(self) -> Vec<f64> {
        match self {
            BarKey::Speed => bin_edges(0.0, 24.0, 2.0),
            BarKey::Weight => bin_edges(MIN_WEIGHT, MAX_WEIGHT, 0.75),
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            BarKey::Speed => "maximum history speed (m/s)",
            BarKey::Weight => "location-risk weight",
        }
    }

    fn key_of(self, m: &ExampleMetrics) -> f64 {
        match self {
            BarKey::Speed => m.max_history_speed,
            BarKey::Weight => m.weight,
        }
    }
}

/// Edges `lo, lo + width, ...` up to `hi`; a final partial bin is kept.
pub fn bin_edges(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    assert!(width > 0.0 && hi > lo, "bin edges need hi > lo and width > 0");
    let n = ((hi - lo) / width - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|i| (lo + i as f64 * width).min(hi)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarBin {
    pub lo: f64,
    pub hi: f64,
    pub mean: Option<f64>,
    pub count: usize,
}

/// Mean difference per key bin. Bins are half-open except the last, which
/// includes its upper edge; keys outside the edges are dropped.
pub fn bar_bins(points: &[(f64, f64)], edges: &[f64]) -> Vec<BarBin> {
    let n = edges.len().saturating_sub(1);
    let mut sums = vec![(0.0, 0usize); n];
    for &(key, diff) in points {
        let slot = (0..n).find(|&i| key >= edges[i] && (key < edges[i + 1] || (i + 1 == n && key <= edges[n])));
        if let Some(i) = slot {
            sums[i].0 += diff;
            sums[i].1 += 1;
        }
    }
    (0..n)
        .map(|i| BarBin {
            lo: edges[i],
            hi: edges[i + 1],
            mean: (sums[i].1 > 0).then(|| sums[i].0 / sums[i].1 as f64),
            count: sums[i].1,
        })
        .collect()
}

/// `(key, variant FDE@3s − baseline FDE@3s)` for every example of `class`
/// scored under both tables, matched on (scene, agent, t_ref).
pub fn paired_fde_differences(
    variant: &[ExampleMetrics],
    baseline: &[ExampleMetrics],
    class: ModelClass,
    key: BarKey,
) -> Vec<(f64, f64)> {
    let base: BTreeMap<(&str, &str, i64), &ExampleMetrics> = baseline
        .iter()
        .map(|m| ((m.scene_id.as_str(), m.agent_id.as_str(), m.t_ref), m))
        .collect();
    variant
        .iter()
        .filter(|m| m.agent_class.model_class() == class)
        .filter_map(|m| {
            base.get(&(m.scene_id.as_str(), m.agent_id.as_str(), m.t_ref))
                .map(|b| (key.key_of(m), m.fde[2] - b.fde[2]))
        })
        .collect()
}

pub fn stratified_bars_svg(bins: &[BarBin], key: BarKey, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 16.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 64.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let extent = bins
        .iter()
        .filter_map(|b| b.mean)
        .map(f64::abs)
        .fold(0.0, f64::max);
    let y_max = if extent > 0.0 { extent * 1.15 } else { 1.0 };
    let zero_y = TOP + plot_h / 2.0;
    let y_of = |v: f64| zero_y - v / y_max * (plot_h / 2.0);

    let mut out = String::new();
    svg_open(&mut out, W, H, title);
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{zero_y:.3}" x2="{:.3}" y2="{zero_y:.3}" stroke="black" stroke-dasharray="4 3"/>"#,
        LEFT + plot_w
    );
    for v in [-y_max, -y_max / 2.0, 0.0, y_max / 2.0, y_max] {
        let y = y_of(v);
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.3}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.3})">ΔFDE@3s (m)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        H - 12.0,
        key.axis_label()
    );

    let n = bins.len().max(1);
    let slot = plot_w / n as f64;
    let _ = writeln!(out, r#"<g id="bars">"#);
    for (i, b) in bins.iter().enumerate() {
        let x = LEFT + i as f64 * slot;
        if let Some(m) = b.mean {
            let (top, height) = if m >= 0.0 {
                (y_of(m), zero_y - y_of(m))
            } else {
                (zero_y, y_of(m) - zero_y)
            };
            let fill = if m > 0.0 { "#b2182b" } else { "#2166ac" };
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{top:.3}" width="{:.3}" height="{height:.3}" fill="{fill}" data-mean="{m:.6}" data-count="{}"/>"#,
                x + slot * 0.1,
                slot * 0.8,
                b.count
            );
            let ty = if m >= 0.0 { top - 4.0 } else { top + height + 12.0 };
            let _ = writeln!(
                out,
                r#"<text x="{:.3}" y="{ty:.3}" font-size="10" text-anchor="middle">n={}</text>"#,
                x + slot / 2.0,
                b.count
            );
        }
    }
    let _ = writeln!(out, "</g>");
    for (i, b) in bins.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="9" text-anchor="middle">{}-{}</text>"#,
            LEFT + (i as f64 + 0.5) * slot,
            TOP + plot_h + 14.0,
            label(b.lo),
            label(b.hi)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_stratified_bars(points: &[(f64, f64)], key: BarKey, edges: &[f64], title: &str, path: &Path) -> Result<()> {
    write_text(path, &stratified_bars_svg(&bar_bins(points, edges), key, title))
}

const MISSING: &str = "—";

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        None => MISSING.into(),
        Some(x) => {
            let s = format!("{x:.decimals$}");
            // A rounded negative zero reads as a sign error.
            if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
                s.trim_start_matches('-').to_string()
            } else {
                s
            }
        }
    }
}

struct TableSpec {
    title: &'static str,
    class: ModelClass,
    metric: Metric,
    strata: &'static [(Stratum, &'static str)],
    decimals: usize,
}

const SPEED_COLUMNS: [(Stratum, &str); 4] = [
    (Stratum::All, "all"),
    (Stratum::Stationary, "stat"),
    (Stratum::NonStationary, "no-stat"),
    (Stratum::HighSpeed, "> 14 m/s"),
];
const RISK_COLUMNS: [(Stratum, &str); 4] = [
    (Stratum::All, "all"),
    (Stratum::Low, "L"),
    (Stratum::Medium, "M"),
    (Stratum::High, "H"),
];
const PEDESTRIAN_COLUMNS: [(Stratum, &str); 3] = [(Stratum::All, "all"), (Stratum::Low, "L"), (Stratum::High, "H")];

const TABLES: [TableSpec; 4] = [
    TableSpec {
        title: "Table 1. Vehicle most-likely FDE (m) by speed category",
        class: ModelClass::Vehicle,
        metric: Metric::Fde,
        strata: &SPEED_COLUMNS,
        decimals: 2,
    },
    TableSpec {
        title: "Table 2. Vehicle most-likely FDE (m) by location risk",
        class: ModelClass::Vehicle,
        metric: Metric::Fde,
        strata: &RISK_COLUMNS,
        decimals: 2,
    },
    TableSpec {
        title: "Table 3. Vehicle KDE-NLL (nats) by location risk",
        class: ModelClass::Vehicle,
        metric: Metric::KdeNll,
        strata: &RISK_COLUMNS,
        decimals: 2,
    },
    TableSpec {
        title: "Table 4. Pedestrian most-likely FDE (m) by location risk",
        class: ModelClass::Pedestrian,
        metric: Metric::Fde,
        strata: &PEDESTRIAN_COLUMNS,
        decimals: 3,
    },
];

/// The four result tables as Markdown. Every variant gets a row; cells
/// without data print as "—".
pub fn result_tables_markdown(reports: &[StratifiedReport]) -> String {
    let find = |class: ModelClass, variant: Variant| {
        reports
            .iter()
            .find(|r| r.agent_class == class && r.variant == variant)
    };
    let mut out = String::from("# Results\n");
    for spec in &TABLES {
        let _ = write!(out, "\n## {}\n\n| Model |", spec.title);
        for h in HORIZONS_S {
            for (_, name) in spec.strata {
                let _ = write!(out, " @{h}s {name} |");
            }
        }
        out.push_str("\n|---|");
        for _ in 0..HORIZONS_S.len() * spec.strata.len() {
            out.push_str("---:|");
        }
        out.push('\n');
        for variant in Variant::ALL {
            let report = find(spec.class, variant);
            let _ = write!(out, "| {} |", variant.title());
            for h in HORIZONS_S {
                for &(stratum, _) in spec.strata {
                    let v = report.and_then(|r| r.mean(spec.metric, h, stratum));
                    let _ = write!(out, " {} |", cell(v, spec.decimals));
                }
            }
            out.push('\n');
        }
    }

    // Stratum sizes are identical across variants; take them from the
    // first report available per class.
    out.push_str("\n## Test examples per stratum\n\n| Class | Stratum | Count |\n|---|---|---:|\n");
    for class in ModelClass::ALL {
        if let Some(r) = reports.iter().find(|r| r.agent_class == class) {
            for &s in Stratum::for_class(class) {
                let _ = writeln!(out, "| {class} | {s} | {} |", r.count(s));
            }
        }
    }
    let rates: Vec<_> = Variant::ALL
        .iter()
        .filter_map(|&v| {
            find(ModelClass::Vehicle, v).map(|r| (v, r.boundary_violation_rate))
        })
        .collect();
    if !rates.is_empty() {
        out.push_str("\n## Vehicle road-boundary violations (most-likely prediction, 4 s)\n\n| Model | Rate |\n|---|---:|\n");
        for (v, rate) in rates {
            let _ = writeln!(out, "| {} | {} |", v.title(), cell(rate, 3));
        }
    }
    out
}

pub fn emit_result_tables(reports: &[StratifiedReport], path: &Path) -> Result<()> {
    write_text(path, &result_tables_markdown(reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_maps_hit_their_anchors() {
        assert_eq!(weight_color(1.0), Rgb(68, 1, 84));
        assert_eq!(weight_color(10.0), Rgb(253, 231, 37));
        assert_eq!(diverging_color(0.0), Rgb(255, 255, 255));
        assert_eq!(diverging_color(-2.5), diverging_color(-1.0));
        assert_eq!(diverging_color(7.0), diverging_color(1.0));
        assert_ne!(diverging_color(-0.5), diverging_color(-1.0));
    }

    #[test]
    fn edges_and_bins() {
        let e = BarKey::Speed.default_edges();
        assert_eq!(e.len(), 13);
        assert_eq!(e[12], 24.0);
        let w = BarKey::Weight.default_edges();
        assert_eq!(w.len(), 13);
        assert_eq!(*w.last().unwrap(), 10.0);
        let bins = bar_bins(&[(15.0, -0.4)], &e);
        let hit: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(hit.len(), 1);
        assert_eq!((hit[0].lo, hit[0].hi, hit[0].mean), (14.0, 16.0, Some(-0.4)));
        // Upper edge belongs to the last bin.
        let bins = bar_bins(&[(10.0, 1.0)], &w);
        assert_eq!(bins.last().unwrap().count, 1);
    }

    #[test]
    fn negative_zero_is_printed_unsigned() {
        assert_eq!(cell(Some(-0.0001), 2), "0.00");
        assert_eq!(cell(Some(-0.01), 2), "-0.01");
        assert_eq!(cell(None, 2), MISSING);
    }
}
