//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits nonzero if any fails. Criteria run sequentially so the
//! timing checks are not disturbed by each other.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dintr_cli::{bench, verify};
use dintr_core::annotations::{rle_decode, FrameRecord};
use dintr_core::conditioning::{BoxRegion, Indicator, Point};
use dintr_core::config::RunConfig;
use dintr_core::engine::Inversion;
use dintr_core::metrics::{evaluate, id_consistency, EvalOptions, EvalReport, MetricKind};
use dintr_core::synthvid::{render, Clip, SceneSpec};
use dintr_core::tracker::track_sequence;

type Outcome = anyhow::Result<(bool, String)>;

fn within(elapsed: Duration, limit: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit, format!("{s:.2} s of {limit} s"))
}

fn operator_equivalence() -> Outcome {
    let started = Instant::now();
    let (d, at) = verify::operator_equivalence(100, 50, None)?;
    let (fast, time) = within(started.elapsed(), 10.0);
    Ok((d <= 1e-9 && fast, format!("max-abs {d:.3e} at {at} (tol 1e-9), {time}")))
}

fn telescoping() -> Outcome {
    let started = Instant::now();
    let d = verify::telescoping(&[1, 5, 50, 250])?;
    let (fast, time) = within(started.elapsed(), 5.0);
    Ok((d <= 1e-9 && fast, format!("max |z_0 - z_next| {d:.3e} over T in {{1,5,50,250}} (tol 1e-9), {time}")))
}

fn stability() -> Outcome {
    let (per_step, full) = verify::stability_from_next(50)?;
    let bounded = verify::stability_bounded(50)?;
    let pass = per_step <= 1e-9 && full <= 1e-9 && bounded <= 1.0 + 1e-12;
    Ok((
        pass,
        format!(
            "from-next vs analytic: per-step {per_step:.2e}, full pass {full:.2e}; blend and offset max amplification {bounded:.15}"
        ),
    ))
}

fn structural_ratio() -> Outcome {
    let started = Instant::now();
    let (i, r, c) = verify::eval_counts(50)?;
    let counts = i == 50 && r == 100 && c == 50;
    let table = bench::run_bench(&RunConfig::default(), &[50], 5, Inversion::Network)?;
    let ratio = table.ratio_at_first().unwrap_or(f64::NAN);
    let (fast, time) = within(started.elapsed(), 60.0);
    Ok((
        counts && (1.6..=2.4).contains(&ratio) && fast,
        format!("evals interpolate {i}, reconstruct {r}, closed-form {c}; median time ratio {ratio:.3} (want [1.6, 2.4]), {time}"),
    ))
}

fn reconstruction_direction() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.engine.finetune_steps = 50;
    let table = bench::run_bench(&cfg, &[50, 100, 150, 200, 250], 1, Inversion::Network)?;
    let rows = table.rows_for("reconstruct");
    let (first, last) = (rows[0].mse, rows[rows.len() - 1].mse);
    let curve: Vec<String> = rows.iter().map(|r| format!("T={} {:.6e}", r.t, r.mse)).collect();
    let monotone = table.reconstruct_nonincreasing();
    Ok((last < first, format!("reconstruct MSE {}; monotone across the grid: {monotone}", curve.join(", "))))
}

fn gradients() -> Outcome {
    let (p, p_at) = verify::primitive_gradients(20)?;
    let (o, o_at) = verify::objective_gradients(20)?;
    Ok((
        p <= 1e-4 && o <= 1e-4,
        format!("20 seeds: primitives worst {p:.2e} ({p_at}), objective worst {o:.2e} ({o_at}) (tol 1e-4)"),
    ))
}

fn attention_invariants() -> Outcome {
    let rows = verify::attention_rows(50)?;
    let window = verify::window_coverage()?;
    let range = verify::fused_range()?;
    let (nesting, minimal) = verify::mapping_properties(1000, 7)?;
    Ok((
        rows <= 1e-9 && window == 0 && range == 0.0 && nesting == 0 && minimal == 0,
        format!(
            "row error {rows:.2e}, window mismatches {window}, fused out-of-range {range:.2e}, \
             nesting violations {nesting}/1000, box violations {minimal}/1000"
        ),
    ))
}

fn default_clip() -> anyhow::Result<Clip> {
    Ok(render(&SceneSpec::default_disc())?)
}

fn carry_forward(truth: &[FrameRecord]) -> Vec<FrameRecord> {
    truth.iter().map(|r| FrameRecord { frame: r.frame, targets: truth[0].targets.clone() }).collect()
}

fn score(truth: &[FrameRecord], pred: &[FrameRecord], kind: MetricKind) -> anyhow::Result<EvalReport> {
    Ok(evaluate(truth, pred, &EvalOptions::new(vec![kind], (64, 64)))?)
}

fn point_at_4(r: &EvalReport) -> f64 {
    let p = r.point.as_ref().expect("point metric requested");
    p.thresholds.iter().position(|&d| d == 4.0).map(|i| p.rates[i]).unwrap_or(f64::NAN)
}

fn synthetic_tracking() -> Outcome {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let c = default_clip()?;
    let t0 = &c.truth[0].targets[0];
    let base = carry_forward(&c.truth);
    let [x, y] = t0.point.expect("truth point");
    let mask = rle_decode(t0.rle.as_ref().expect("truth mask"), 64, 64)?;
    let inits = [
        (MetricKind::Point, Indicator::Point(Point { x, y })),
        (MetricKind::Box, Indicator::Box(BoxRegion::from_array(t0.bbox.expect("truth box")))),
        (MetricKind::Mask, Indicator::Segment(mask)),
    ];
    let mut pass = true;
    let mut parts = vec![format!(
        "{} frames, {} finetune steps, lr {:e}",
        c.frames.len(),
        cfg.engine.finetune_steps,
        cfg.engine.lr
    )];
    for (kind, init) in inits {
        let pred = track_sequence(&c.frames, &[init], &cfg, None)?.records();
        let (ours, theirs) = (score(&c.truth, &pred, kind)?, score(&c.truth, &base, kind)?);
        let (name, a, b, bar) = match kind {
            MetricKind::Point => ("acc@4", point_at_4(&ours), point_at_4(&theirs), 0.9),
            MetricKind::Box => ("box IoU", ours.box_iou.unwrap_or(0.0), theirs.box_iou.unwrap_or(0.0), 0.7),
            _ => ("mask J", ours.mask_j.unwrap_or(0.0), theirs.mask_j.unwrap_or(0.0), 0.6),
        };
        pass &= a >= bar && a > b;
        parts.push(format!("{name} {a:.3} (bar {bar}, carry-forward {b:.3})"));
    }
    let (fast, time) = within(started.elapsed(), 600.0);
    parts.push(time);
    Ok((pass && fast, parts.join("; ")))
}

fn multi_target() -> Outcome {
    let round_trip = verify::pack_split_round_trip()?;
    let c = render(&SceneSpec::two_discs())?;
    let init: Vec<Indicator> = c.truth[0]
        .targets
        .iter()
        .map(|t| {
            let [x, y] = t.point.expect("truth point");
            Indicator::Point(Point { x, y })
        })
        .collect();
    let pred = track_sequence(&c.frames, &init, &RunConfig::default(), None)?.records();
    let ids = id_consistency(&pred, &c.truth, (64, 64), 0.5, 8.0)?;
    let slots = init.len() * c.frames.len();
    let errors: Vec<String> = (0..init.len())
        .map(|id| {
            let total: f64 = pred
                .iter()
                .zip(&c.truth)
                .filter_map(|(p, g)| Some((p.target(id)?.point?, g.target(id)?.point?)))
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .sum();
            format!("target {id} mean point error {:.2} px", total / c.frames.len() as f64)
        })
        .collect();
    // Zero switches only means something when every target is matched on
    // every frame; an unmatched target cannot switch.
    Ok((
        round_trip == 0.0 && init.len() == 2 && ids.switches == 0 && ids.matched == slots,
        format!(
            "pack/split max error {round_trip:e}; {} targets over {} frames: {} switches, {}/{slots} target-frames matched; {}",
            init.len(),
            c.frames.len(),
            ids.switches,
            ids.matched,
            errors.join(", ")
        ),
    ))
}

fn dintr(args: &[&str]) -> anyhow::Result<Vec<u8>> {
    let out = Command::new(env!("CARGO_BIN_EXE_dintr")).args(args).output()?;
    anyhow::ensure!(out.status.success(), "dintr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let seq = dir.path().join("seq");
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    dintr(&["synth", "--frames", "5", "--out", &s(&seq)])?;
    let mut outputs = Vec::new();
    for run in ["a.jsonl", "b.jsonl"] {
        let out = dir.path().join(run);
        dintr(&["track", "--seq", &s(&seq), "--init-from-gt", "box", "--seed", "11", "--out", &s(&out)])?;
        outputs.push(std::fs::read(out)?);
    }
    let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
    Ok((same, format!("two seeded runs wrote {} and {} bytes, identical: {same}", outputs[0].len(), outputs[1].len())))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("operator equivalence", operator_equivalence),
        ("telescoping", telescoping),
        ("stability", stability),
        ("structural 2x", structural_ratio),
        ("reconstruction improves with T", reconstruction_direction),
        ("gradient correctness", gradients),
        ("attention invariants", attention_invariants),
        ("synthetic tracking", synthetic_tracking),
        ("multi-target", multi_target),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
