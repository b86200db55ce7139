//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if
//! any criterion fails. The multi-seed pipeline runs take a few minutes.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskweave::dataset::{apply_stationary_smoothing, extract_examples, AgentClass, ModelClass};
use riskweave::geometry::{Rotation, Vec2};
use riskweave::metrics::*;
use riskweave::pipeline::{self, PipelineConfig, Stage};
use riskweave::predictor::*;
use riskweave::report::{diverging_color, result_tables_markdown, DiffColorPlot, Rgb};
use riskweave::riskmap::*;
use riskweave::simgen::{generate_world, simulate_scenes, WorldConfig};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut bad_constant = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=40);
        let counts: Vec<u64> = if case % 10 == 0 {
            vec![rng.random_range(0..50); n * n]
        } else {
            (0..n * n).map(|_| rng.random_range(0..500)).collect()
        };
        let constant = counts.iter().all(|&c| c == counts[0]);
        let w = normalize_to_weights(&CountGrid { grid_n: n, counts });
        if constant {
            bad_constant += w.iter().filter(|&&x| x != 1.0).count();
        } else {
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((lo - 1.0).abs()).max((hi - 10.0).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-9 && bad_constant == 0 && elapsed < Duration::from_secs(1),
        format!("1000 grids, max endpoint error {worst:.1e}, constant-grid misses {bad_constant}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 2

fn hotspot_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = WorldConfig::default();
    let world = generate_world(&cfg).unwrap();
    let (ds, ann) = simulate_scenes(&world, &cfg).unwrap();
    let ds = apply_stationary_smoothing(ds, 1.0);
    let map = &ds.maps[0];
    let hm = RiskHeatmap::build(&ds, map, DEFAULT_GRID_N);

    // Histogram mass is the set of counted midpoints.
    let (mut inside, mut total) = (0usize, 0usize);
    for scene in &ds.scenes {
        for it in scene_interactions(&scene.tracks) {
            total += 1;
            if ann.hotspots.iter().any(|h| h.contains(it.midpoint)) {
                inside += 1;
            }
        }
    }
    assert_eq!(total as u64, hm.counts.iter().sum::<u64>());
    let share = inside as f64 / total as f64;

    let near = |ix: usize, iy: usize| {
        ann.hotspots.iter().any(|h| {
            let (x0, y0) = hm.bin(Vec2::new(h.x0, h.y0));
            let (x1, y1) = hm.bin(Vec2::new(h.x1, h.y1));
            ix + 2 >= x0 && ix <= x1 + 2 && iy + 2 >= y0 && iy <= y1 + 2
        })
    };
    let mut hot = 0;
    let mut stray = Vec::new();
    for iy in 0..hm.grid_n {
        for ix in 0..hm.grid_n {
            if hm.weight_at(ix, iy) >= 7.75 {
                hot += 1;
                if !near(ix, iy) {
                    stray.push((ix, iy));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        share >= 0.6 && hot > 0 && stray.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "{:.1}% of {total} counts inside hotspots, {hot} bins >= 7.75 ({} far from a hotspot), {elapsed:.2?}",
            100.0 * share,
            stray.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random_model(rng: &mut ChaCha8Rng) -> (ModelParams, ModelInput, [Vec2; 8], f64) {
    let shape = ModelShape::new(rng.random_range(2..8), rng.random_range(1..5));
    let mut model = ModelParams::init_uniform(shape, rng.random_range(0.3..3.0), rng);
    for p in &mut model.params {
        *p *= 3.0;
    }
    let input = ModelInput {
        features: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
        rotation: Rotation::from_angle(rng.random_range(-3.1..3.1)),
        origin: Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
    };
    let future = std::array::from_fn(|t| {
        input.origin + Vec2::new(0.5 * (t + 1) as f64, 0.1 * t as f64) + Vec2::new(rng.random_range(-0.3..0.3), 0.0)
    });
    (model, input, future, rng.random_range(0.5..4.0))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (model, input, future, w) = random_model(&mut rng);
        let analytic = nll_loss_weighted(&model, &input, &future, w, 6).unwrap().grad;
        let mut probe = model.clone();
        for i in 0..model.params.len() {
            let x = probe.params[i];
            probe.params[i] = x + h;
            let up = nll_loss_value(&probe, &input, &future, w, 6);
            probe.params[i] = x - h;
            let down = nll_loss_value(&probe, &input, &future, w, 6);
            probe.params[i] = x;
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(5),
        format!("20 models, max relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 4

fn zero_weight_exactness() -> Outcome {
    // Real windows from a small simulated world, parked vehicles included.
    let cfg = WorldConfig {
        n_scenes: 3,
        seed: 5,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    let ds = apply_stationary_smoothing(simulate_scenes(&world, &cfg).unwrap().0, 1.0);
    let hm = RiskHeatmap::build(&ds, &ds.maps[0], DEFAULT_GRID_N);
    let examples: Vec<_> = extract_examples(&ds)
        .into_iter()
        .filter(|e| e.agent_class == AgentClass::Vehicle)
        .collect();
    let inputs: Vec<ModelInput> = examples.iter().map(build_features).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = ModelParams::init_uniform(ModelShape::new(16, 4), 1.0, &mut rng);

    let mut worst: f64 = 0.0;
    let mut batches = 0;
    let mut zeroed = 0;
    for chunk in (0..examples.len()).collect::<Vec<_>>().chunks(64) {
        let items: Vec<BatchItem<'_>> = chunk
            .iter()
            .map(|&i| BatchItem {
                input: &inputs[i],
                future: &examples[i].future,
                weight: compute_example_weight(&examples[i], &hm, Variant::NonStationary),
            })
            .collect();
        let parked = chunk.iter().filter(|&&i| examples[i].whole_track_stationary).count();
        if parked == 0 {
            continue;
        }
        batches += 1;
        zeroed += parked;
        let full = batch_loss_and_grad(&model, &items, 6);
        // Same batch with the parked terms dropped but the batch size kept.
        let n = items.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.params.len()];
        for (item, &i) in items.iter().zip(chunk) {
            if examples[i].whole_track_stationary {
                continue;
            }
            let lg = nll_loss_weighted(&model, item.input, item.future, item.weight, 6).unwrap();
            loss += lg.loss / n;
            for (g, x) in grad.iter_mut().zip(&lg.grad) {
                *g += x / n;
            }
        }
        worst = worst.max((full.loss - loss).abs());
        for (a, b) in full.grad.iter().zip(&grad) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        batches > 0 && worst <= 1e-12,
        format!("{batches} batches with {zeroed} parked examples, max deviation {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn kde_oracle(samples: &[[Vec2; 8]], gt: &[Vec2; 8], horizon_s: usize) -> f64 {
    let steps = 2 * horizon_s;
    let n = samples.len() as f64;
    let mut acc = 0.0;
    for t in 0..steps {
        let mx = samples.iter().map(|s| s[t].x).sum::<f64>() / n;
        let my = samples.iter().map(|s| s[t].y).sum::<f64>() / n;
        let sx = (samples.iter().map(|s| (s[t].x - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sy = (samples.iter().map(|s| (s[t].y - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let hx = (sx * n.powf(-1.0 / 6.0)).max(1e-3);
        let hy = (sy * n.powf(-1.0 / 6.0)).max(1e-3);
        let q: Vec<f64> = samples
            .iter()
            .map(|s| ((gt[t].x - s[t].x) / hx).powi(2) + ((gt[t].y - s[t].y) / hy).powi(2))
            .collect();
        let q0 = q.iter().copied().fold(f64::INFINITY, f64::min);
        let mut p = 0.0;
        for qi in &q {
            p += (-0.5 * (qi - q0)).exp();
        }
        p /= n * 2.0 * std::f64::consts::PI * hx * hy;
        acc += 0.5 * q0 - p.ln();
    }
    acc / steps as f64
}

fn kde_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..99 {
        let n = rng.random_range(2..100);
        let spread = rng.random_range(0.01..5.0);
        let samples: Vec<[Vec2; 8]> = (0..n)
            .map(|_| {
                std::array::from_fn(|t| {
                    Vec2::new(2.0 * t as f64, 0.0) + Vec2::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread))
                })
            })
            .collect();
        let gt = std::array::from_fn(|t| Vec2::new(2.0 * t as f64 + rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
        let h = rng.random_range(1..=4);
        worst = worst.max((kde_nll_at(&samples, &gt, h).unwrap() - kde_oracle(&samples, &gt, h)).abs());
    }
    let gt = [Vec2::new(4.0, -1.0); 8];
    let floor_case = kde_nll_at(&[gt; 16], &gt, 1).unwrap();
    let closed = (2.0 * std::f64::consts::PI).ln() - 6.0 * 10f64.ln();
    worst = worst.max((floor_case - kde_oracle(&[gt; 16], &gt, 1)).abs());
    outcome(
        worst < 1e-9 && (floor_case - closed).abs() < 1e-9,
        format!("100 cases, max deviation {worst:.1e}, floor case {floor_case:.4} nats"),
    )
}

// ---------------------------------------------------------------- 6

fn partition_identities(runs: &[PathBuf]) -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut count_errors = 0;
    for dir in runs {
        for v in Variant::ALL {
            let scores = read_scores_csv(&dir.join(format!("scores_{v}.csv"))).unwrap();
            for r in aggregate_report(&scores, v).reports {
                let all = r.count(Stratum::All);
                let mut parts: Vec<Vec<Stratum>> = vec![match r.agent_class {
                    ModelClass::Vehicle => vec![Stratum::Low, Stratum::Medium, Stratum::High],
                    ModelClass::Pedestrian => vec![Stratum::Low, Stratum::High],
                }];
                if r.agent_class == ModelClass::Vehicle {
                    parts.push(vec![Stratum::Stationary, Stratum::NonStationary]);
                }
                for part in parts {
                    if part.iter().map(|s| r.count(*s)).sum::<usize>() != all {
                        count_errors += 1;
                    }
                    for metric in [Metric::Fde, Metric::KdeNll] {
                        for h in HORIZONS_S {
                            let Some(m) = r.mean(metric, h, Stratum::All) else { continue };
                            let re: f64 = part
                                .iter()
                                .filter_map(|s| r.mean(metric, h, *s).map(|x| x * r.count(*s) as f64))
                                .sum::<f64>()
                                / all as f64;
                            worst = worst.max((m - re).abs());
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    outcome(
        checked > 0 && count_errors == 0 && worst < 1e-9,
        format!("{checked} evaluated reports, {count_errors} count mismatches, max recomposition error {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 7, 8

struct SeedResult {
    seed: u64,
    fde3: BTreeMap<(Variant, Stratum), Option<f64>>,
    counts: BTreeMap<Stratum, usize>,
}

fn run_pipeline(seed: u64, out: &Path) -> SeedResult {
    let cfg = PipelineConfig::load(
        None,
        &[format!("seed={seed}"), format!("paths.output=\"{}\"", out.display())],
    )
    .unwrap();
    pipeline::run(&cfg, Stage::All, None).unwrap();
    let reports = read_report_csv(&out.join(pipeline::REPORT_FILE)).unwrap();
    let mut fde3 = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for r in reports.iter().filter(|r| r.agent_class == ModelClass::Vehicle) {
        for s in [Stratum::High, Stratum::HighSpeed] {
            fde3.insert((r.variant, s), r.mean(Metric::Fde, 3, s));
            counts.insert(s, r.count(s));
        }
    }
    SeedResult { seed, fde3, counts }
}

fn directional(results: &[SeedResult], variant: Variant, stratum: Stratum, what: &str) -> Outcome {
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for r in results {
        let v = r.fde3[&(variant, stratum)];
        let b = r.fde3[&(Variant::Baseline, stratum)];
        let win = matches!((v, b), (Some(v), Some(b)) if v <= b);
        wins += win as usize;
        per_seed.push(format!(
            "s{}:{}{}",
            r.seed,
            match (v, b) {
                (Some(v), Some(b)) => format!("{:+.2}", v - b),
                _ => "n/a".into(),
            },
            if win { "" } else { "x" }
        ));
    }
    let n_min = results.iter().map(|r| r.counts[&stratum]).min().unwrap_or(0);
    outcome(
        wins >= 7,
        format!(
            "{what}: {wins}/{} seeds no worse than baseline (min stratum size {n_min}; diffs {})",
            results.len(),
            per_seed.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 9

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(seed: u64, out: &Path) -> Outcome {
    let before = snapshot(out);
    std::fs::remove_dir_all(out).unwrap();
    run_pipeline(seed, out);
    let after = snapshot(out);
    let differing: Vec<_> = before
        .keys()
        .chain(after.keys())
        .filter(|k| before.get(*k) != after.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "seed {seed}: {} files compared, {} differ{}",
            before.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 10

fn fidelity() -> Outcome {
    let tables = result_tables_markdown(&common::reports());
    let golden_tables = std::fs::read_to_string(common::golden_path("tables.md")).unwrap();
    let (v, b) = common::clip_fixture();
    let svg = DiffColorPlot::from_tables(&v, &b, common::EXTENTS, 4).unwrap().to_svg();
    let golden_svg = std::fs::read_to_string(common::golden_path("fde_diff.svg")).unwrap();

    let t1 = tables.lines().skip_while(|l| !l.starts_with("## Table 1.")).nth(2).unwrap_or("");
    let t4 = tables.lines().skip_while(|l| !l.starts_with("## Table 4.")).nth(2).unwrap_or("");
    let shape1 = t1.contains("| @1s all | @1s stat | @1s no-stat | @1s > 14 m/s |");
    let shape4 = t4.contains("| @1s all | @1s L | @1s H | @2s all |");
    let clip = diverging_color(-7.0) == Rgb(33, 102, 172)
        && diverging_color(-1.0) == Rgb(33, 102, 172)
        && diverging_color(1.0) == Rgb(178, 24, 43)
        && diverging_color(4.0) == Rgb(178, 24, 43)
        && diverging_color(0.9) != Rgb(178, 24, 43);
    let tables_ok = tables == golden_tables;
    let svg_ok = svg == golden_svg;
    outcome(
        tables_ok && svg_ok && shape1 && shape4 && clip,
        format!(
            "tables golden {}, colorplot golden {}, Table 1 columns {}, Table 4 columns {}, clip at +/-1 {}",
            ok(tables_ok),
            ok(svg_ok),
            ok(shape1),
            ok(shape4),
            ok(clip)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "MISMATCH"
    }
}

fn catch<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default()
    })
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch(f).unwrap_or_else(|msg| outcome(false, format!("panicked: {msg}")))
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!("[{}] {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().unwrap();
    let mut all = Vec::new();
    let mut check = |id: usize, name: &str, o: Outcome| {
        report(id, name, &o);
        all.push(o.pass);
    };

    check(1, "normalization", guarded(normalization));
    check(2, "hotspot recovery", guarded(hotspot_recovery));
    check(3, "gradient correctness", guarded(gradient_check));
    check(4, "zero-weight exactness", guarded(zero_weight_exactness));
    check(5, "KDE-NLL oracle", guarded(kde_check));

    let start = Instant::now();
    let dirs: Vec<PathBuf> = SEEDS.map(|s| root.path().join(format!("seed-{s}"))).collect();
    let results = match catch(|| SEEDS.zip(&dirs).map(|(s, d)| run_pipeline(s, d)).collect::<Vec<_>>()) {
        Ok(r) => r,
        Err(msg) => {
            for (id, name) in [
                (6, "stratification partition"),
                (7, "location-risk high-risk FDE@3s"),
                (8, "non-stationary >14 m/s FDE@3s"),
                (9, "end-to-end determinism"),
            ] {
                check(id, name, outcome(false, format!("pipeline failed: {msg}")));
            }
            check(10, "table/figure fidelity", guarded(fidelity));
            return finish(&all);
        }
    };
    let pipeline_time = start.elapsed();

    check(6, "stratification partition", guarded(|| partition_identities(&dirs)));
    let mut o7 = directional(&results, Variant::LocationRisk, Stratum::High, "high-risk stratum");
    o7.pass &= pipeline_time < Duration::from_secs(600);
    o7.detail += &format!("; 10 pipeline runs in {pipeline_time:.0?}");
    check(7, "location-risk high-risk FDE@3s", o7);
    check(8, "non-stationary >14 m/s FDE@3s", directional(&results, Variant::NonStationary, Stratum::HighSpeed, "high-speed stratum"));
    check(9, "end-to-end determinism", guarded(|| determinism(1, &dirs[0])));
    check(10, "table/figure fidelity", guarded(fidelity));
    finish(&all)
}

fn finish(all: &[bool]) -> ExitCode {
    let passed = all.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", all.len());
    if passed == all.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
