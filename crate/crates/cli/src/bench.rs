//! Wall-clock, evaluation-count and accuracy comparison of reconstruction
//! against interpolation across schedule lengths.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use dintr_core::codec::{Codec, Latent};
use dintr_core::conditioning::{BoxRegion, Conditioner, Indicator, LatentGrid};
use dintr_core::config::RunConfig;
use dintr_core::denoiser::Denoiser;
use dintr_core::engine::{
    finetune, mse, run_process, FinetuneConfig, Inversion, NoiseContext, OperatorKind, ProcessKind,
};
use dintr_core::numerics::Tensor;
use dintr_core::schedule::NoiseSchedule;
use dintr_core::synthvid::{render, SceneSpec};
use dintr_core::tracker::{build_tau, derive_seed};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub median_seconds: f64,
    pub seconds: Vec<f64>,
    pub network_evals: usize,
    /// Final latent against the true next frame.
    pub mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub inversion: Inversion,
    pub operator: OperatorKind,
    pub finetune_steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub repeats: usize,
    /// Zero-motion error: the current frame scored against the next one.
    pub baseline_mse: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn rows_for(&self, mode: &str) -> Vec<&BenchRow> {
        self.rows.iter().filter(|r| r.mode == mode).collect()
    }

    /// Reconstruction time over interpolation time at the first `T`.
    pub fn ratio_at_first(&self) -> Option<f64> {
        let r = self.rows_for("reconstruct");
        let i = self.rows_for("interpolate");
        Some(r.first()?.median_seconds / i.first()?.median_seconds)
    }

    pub fn reconstruct_nonincreasing(&self) -> bool {
        self.rows_for("reconstruct").windows(2).all(|w| w[1].mse <= w[0].mse)
    }
}

/// The first frame pair of the default disc scene with box conditioning
/// from the frame-0 ground truth.
pub struct Fixture {
    pub z0: Latent,
    pub z1: Latent,
    pub tau: Tensor,
    pub base: Denoiser,
}

pub fn fixture(cfg: &RunConfig) -> anyhow::Result<Fixture> {
    let mut spec = SceneSpec::default_disc();
    spec.frames = 2;
    let clip = render(&spec)?;
    let codec = Codec::new(cfg.model.patch)?;
    let z0 = codec.encode(&clip.frames[0])?;
    let z1 = codec.encode(&clip.frames[1])?;
    let base = Denoiser::init(cfg.denoiser_config())?;
    let grid = LatentGrid { height: z0.height(), width: z0.width(), patch: cfg.model.patch };
    let cond = Conditioner::new(grid, base.input_projection().clone(), cfg.conditioning.sigma)?;
    let b = clip.truth[0].targets[0].bbox.context("fixture ground truth has no box")?;
    let tau = build_tau(&cond, &[Indicator::Box(BoxRegion::from_array(b))], &z0, cfg.conditioning.background_token)?;
    Ok(Fixture { z0, z1, tau: tau.tokens, base })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Finetunes a fresh copy of the base model for each process with the same
/// budget, then times `repeats` alternating runs of both processes.
pub fn run_bench(cfg: &RunConfig, ts: &[usize], repeats: usize, inversion: Inversion) -> anyhow::Result<BenchTable> {
    anyhow::ensure!(repeats >= 1, "bench needs at least one repeat");
    anyhow::ensure!(!ts.is_empty(), "bench needs at least one T");
    let fx = fixture(cfg)?;
    let (z0, z1) = (fx.z0.tokens(), fx.z1.tokens());
    let noise = NoiseContext { seed: derive_seed(cfg.seed, 0, 1) };
    let op = cfg.engine.operator;
    let mut rows = Vec::new();
    for &t in ts {
        let sc = NoiseSchedule::make_linear(t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
        let mut models = Vec::new();
        for process in [ProcessKind::Reconstruct, ProcessKind::Interpolate] {
            let mut m = fx.base.clone();
            if cfg.engine.finetune_steps > 0 {
                let ft = FinetuneConfig {
                    process,
                    operator: op,
                    steps: cfg.engine.finetune_steps,
                    lr: cfg.engine.lr,
                    seed: derive_seed(cfg.seed, 0, 2),
                };
                finetune(&mut m, z0, z1, &fx.tau, &sc, &noise, &ft)?;
            }
            models.push((process, m));
        }
        let mut seconds = vec![Vec::with_capacity(repeats); 2];
        let mut last = Vec::new();
        for _ in 0..repeats {
            last.clear();
            for (i, (process, m)) in models.iter().enumerate() {
                let started = Instant::now();
                let trace = run_process(*process, z0, z1, &fx.tau, &sc, op, m, false, &noise, inversion)?;
                seconds[i].push(started.elapsed().as_secs_f64());
                last.push(trace);
            }
        }
        for (i, (process, _)) in models.iter().enumerate() {
            rows.push(BenchRow {
                mode: process.name().to_string(),
                t,
                median_seconds: median(&seconds[i]),
                seconds: seconds[i].clone(),
                network_evals: last[i].evals,
                mse: mse(last[i].final_latent(), z1)?,
            });
        }
    }
    rows.sort_by(|a, b| a.mode.cmp(&b.mode).reverse().then(a.t.cmp(&b.t)));
    Ok(BenchTable {
        inversion,
        operator: op,
        finetune_steps: cfg.engine.finetune_steps,
        lr: cfg.engine.lr,
        seed: cfg.seed,
        repeats,
        baseline_mse: mse(z0, z1)?,
        rows,
    })
}

pub fn to_csv(table: &BenchTable) -> String {
    let mut s = String::from("mode,T,median_seconds,network_evals,mse\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{},{:.6},{},{:.9e}", r.mode, r.t, r.median_seconds, r.network_evals, r.mse);
    }
    s
}

/// Line chart of median time against `T`, one series per mode.
pub fn to_svg(table: &BenchTable) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let ts: Vec<f64> = table.rows.iter().map(|r| r.t as f64).collect();
    let (t_min, t_max) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let y_max = table.rows.iter().map(|r| r.median_seconds).fold(0.0, f64::max).max(1e-12);
    let x_of = |t: f64| if t_max > t_min { pad + (t - t_min) / (t_max - t_min) * (w - 2.0 * pad) } else { w / 2.0 };
    let y_of = |s: f64| h - pad - s / y_max * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">T</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">median seconds</text>\n\
         <text x=\"{pad}\" y=\"{ly}\" font-size=\"10\" text-anchor=\"end\">{y_max:.3}</text>\n",
        b = h - pad,
        r = w - pad,
        cx = w / 2.0,
        ty = h - 12.0,
        cy = h / 2.0,
        ly = pad - 4.0,
    );
    for (mode, colour, y_legend) in [("reconstruct", "#d62728", 20.0), ("interpolate", "#1f77b4", 34.0)] {
        let rows = table.rows_for(mode);
        let points: Vec<String> =
            rows.iter().map(|r| format!("{:.1},{:.1}", x_of(r.t as f64), y_of(r.median_seconds))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        for r in &rows {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>\n<text x=\"{:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                x_of(r.t as f64),
                y_of(r.median_seconds),
                x_of(r.t as f64),
                h - pad + 14.0,
                r.t
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{y_legend}\" font-size=\"11\" fill=\"{colour}\">{mode}</text>",
            w - pad - 70.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_outputs(table: &BenchTable, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("bench.csv"), to_csv(table))?;
    std::fs::write(dir.join("bench.json"), serde_json::to_string_pretty(table)? + "\n")?;
    std::fs::write(dir.join("bench.svg"), to_svg(table))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.engine.finetune_steps = 2;
        cfg
    }

    #[test]
    fn eval_counts_are_structural() {
        let table = run_bench(&quick(), &[4, 8], 1, Inversion::Network).unwrap();
        for r in &table.rows {
            let want = if r.mode == "reconstruct" { 2 * r.t } else { r.t };
            assert_eq!(r.network_evals, want, "{} at T={}", r.mode, r.t);
        }
        let closed = run_bench(&quick(), &[4], 1, Inversion::ClosedForm).unwrap();
        assert_eq!(closed.rows_for("reconstruct")[0].network_evals, 4);
    }

    #[test]
    fn csv_svg_and_json_written() {
        let table = run_bench(&quick(), &[3, 6], 2, Inversion::Network).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&table, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("mode,T,median_seconds,network_evals,mse"));
        let svg = std::fs::read_to_string(dir.path().join("bench.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 4);
        assert_eq!(json["rows"][0]["seconds"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
