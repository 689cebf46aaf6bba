//! Named invariant checks with measured values and tolerances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use dintr_core::codec::{Codec, Frame};
use dintr_core::conditioning::{pack_targets, Indicator, LatentGrid};
use dintr_core::config::RunConfig;
use dintr_core::denoiser::{Denoiser, DenoiserConfig, IdentityNetwork};
use dintr_core::engine::{
    blend, interpolate, is_boundary, objective_gradient, operator_step, reconstruct, stability_probe, FinetuneConfig,
    Inversion, NoiseContext, OperatorKind, ProcessKind,
};
use dintr_core::extraction::{
    accumulate, fuse, map_to_indicator, segment_of, window_len, FuseMode, FusedSaliency, OutputKind,
};
use dintr_core::numerics::gradcheck::primitive_gradient_errors;
use dintr_core::numerics::{finite_difference, relative_error, Tensor};
use dintr_core::schedule::{seeded_noise, NoiseSchedule};

use crate::Mutation;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass: measured <= tolerance, measured, tolerance, detail: detail.into() }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self { name: name.into(), pass: false, measured: f64::NAN, tolerance: 0.0, detail: format!("error: {err}") }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn sched(t: usize) -> NoiseSchedule {
    NoiseSchedule::make_linear(t, 1e-4, 0.02).expect("valid schedule")
}

fn pair(seed: u64, shape: &[usize]) -> (Tensor, Tensor) {
    (seeded_noise(shape, seed, 1), seeded_noise(shape, seed, 2))
}

/// Identity-network trace `[z_0, .., z_T]` of one operator, with an optional
/// sign flip in the from-next carried term.
pub fn operator_trace(
    kind: OperatorKind,
    z0: &Tensor,
    z1: &Tensor,
    sc: &NoiseSchedule,
    mutation: Option<Mutation>,
) -> dintr_core::Result<Vec<Tensor>> {
    let t = sc.steps();
    let noise = NoiseContext { seed: 0 };
    let mut states = vec![Tensor::zeros(&[0]); t + 1];
    states[t] = z0.clone();
    for k in (1..=t).rev() {
        let zk = &states[k];
        states[k - 1] = match (kind, mutation) {
            (OperatorKind::FromNext, Some(Mutation::FlipFromNext)) => {
                let w = sc.interp_weights();
                let r = w[k - 1] / w[k];
                z1.axpy(-r, &zk.sub(z1)?)?
            }
            _ if is_boundary(kind, sc, k) => blend(z0, z1, sc, k - 1)?,
            _ => operator_step(kind, zk, z0, z1, sc, k, &noise)?,
        };
    }
    Ok(states)
}

/// Worst pointwise disagreement of the recurrence operators with the blend
/// closed form over `pairs` random latent pairs.
pub fn operator_equivalence(pairs: usize, t: usize, mutation: Option<Mutation>) -> dintr_core::Result<(f64, String)> {
    let sc = sched(t);
    let mut worst = (0.0, String::new());
    for p in 0..pairs as u64 {
        let (z0, z1) = pair(p, &[16, 48]);
        let reference = operator_trace(OperatorKind::Blend, &z0, &z1, &sc, None)?;
        for kind in [OperatorKind::FromNext, OperatorKind::FromCurrent, OperatorKind::OffsetClean] {
            let tr = operator_trace(kind, &z0, &z1, &sc, mutation)?;
            for k in 0..=t {
                let d = tr[k].max_abs_diff(&reference[k])?;
                if d > worst.0 {
                    worst = (d, format!("{} pair {p} step {k}", kind.name()));
                }
            }
        }
    }
    Ok(worst)
}

/// Largest `|z_0 - z_t1|` of offset-clean identity passes over `ts`.
pub fn telescoping(ts: &[usize]) -> dintr_core::Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in ts {
        let (z0, z1) = pair(t as u64, &[16, 48]);
        let tau = Tensor::zeros(&[1, 4]);
        let tr = interpolate(
            &z0,
            &z1,
            &tau,
            &sched(t),
            OperatorKind::OffsetClean,
            &IdentityNetwork,
            false,
            &NoiseContext { seed: 0 },
        )?;
        worst = worst.max(tr.final_latent().max_abs_diff(&z1)?);
    }
    Ok(worst)
}

/// From-next: measured against analytic per-step and full-pass amplification.
pub fn stability_from_next(t: usize) -> dintr_core::Result<(f64, f64)> {
    let sc = sched(t);
    let c = stability_probe(OperatorKind::FromNext, &sc, 1e-3)?;
    let per_step = c.measured.iter().zip(&c.analytic).map(|(m, a)| (m - a).abs()).fold(0.0, f64::max);
    let w = sc.interp_weights();
    let full = (c.cumulative - w[0] / w[t]).abs();
    Ok((per_step, full))
}

/// Largest measured amplification of blend and offset-clean, per step and full pass.
pub fn stability_bounded(t: usize) -> dintr_core::Result<f64> {
    let sc = sched(t);
    let mut worst: f64 = 0.0;
    for kind in [OperatorKind::Blend, OperatorKind::OffsetClean] {
        let c = stability_probe(kind, &sc, 1e-3)?;
        worst = c.measured.iter().cloned().fold(worst, f64::max).max(c.cumulative);
    }
    Ok(worst)
}

/// Bitwise re-derivation of every stored step from its predecessor.
pub fn chaining(t: usize) -> dintr_core::Result<usize> {
    let sc = sched(t);
    let (z0, z1) = pair(3, &[4, 6]);
    let noise = NoiseContext { seed: 0 };
    let mut mismatches = 0;
    for kind in [OperatorKind::FromNext, OperatorKind::FromCurrent, OperatorKind::OffsetClean] {
        let tau = Tensor::zeros(&[1, 4]);
        let tr = interpolate(&z0, &z1, &tau, &sc, kind, &IdentityNetwork, false, &noise)?;
        for k in 1..=t {
            let again = if is_boundary(kind, &sc, k) {
                blend(&z0, &z1, &sc, k - 1)?
            } else {
                operator_step(kind, tr.state(k), &z0, &z1, &sc, k, &noise)?
            };
            if again.data() != tr.state(k - 1).data() {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches)
}

pub fn identity_reconstruction(t: usize) -> dintr_core::Result<f64> {
    let (z0, _) = pair(11, &[16, 48]);
    let tau = Tensor::zeros(&[1, 4]);
    let mut worst: f64 = 0.0;
    for inv in [Inversion::Network, Inversion::ClosedForm] {
        let tr = reconstruct(&z0, &tau, &sched(t), &IdentityNetwork, false, &NoiseContext { seed: 5 }, inv)?;
        worst = worst.max(tr.final_latent().max_abs_diff(&z0)?);
    }
    Ok(worst)
}

/// `(interpolate, network reconstruct, closed-form reconstruct)` evaluations.
pub fn eval_counts(t: usize) -> dintr_core::Result<(usize, usize, usize)> {
    let (z0, z1) = pair(12, &[4, 6]);
    let tau = Tensor::zeros(&[1, 4]);
    let sc = sched(t);
    let noise = NoiseContext { seed: 0 };
    let i = interpolate(&z0, &z1, &tau, &sc, OperatorKind::OffsetClean, &IdentityNetwork, false, &noise)?.evals;
    let r = reconstruct(&z0, &tau, &sc, &IdentityNetwork, false, &noise, Inversion::Network)?.evals;
    let c = reconstruct(&z0, &tau, &sc, &IdentityNetwork, false, &noise, Inversion::ClosedForm)?.evals;
    Ok((i, r, c))
}

/// The default-size denoiser on a synthetic pair, capturing attention.
fn captured_records(t: usize) -> dintr_core::Result<(Vec<dintr_core::denoiser::AttentionRecord>, usize)> {
    let cfg = RunConfig::default();
    let mut model = Denoiser::init(cfg.denoiser_config())?;
    model.set_param("w_out", Tensor::from_fn(&[cfg.model.embed_dim, 48], |i| 0.01 * ((i % 7) as f64 - 3.0)))?;
    let codec = Codec::default();
    let mut spec = dintr_core::synthvid::SceneSpec::default_disc();
    spec.frames = 2;
    let clip = dintr_core::synthvid::render(&spec)?;
    let z0 = codec.encode(&clip.frames[0])?;
    let z1 = codec.encode(&clip.frames[1])?;
    let tau = seeded_noise(&[3, cfg.model.embed_dim], 4, 0);
    let tr = interpolate(
        z0.tokens(),
        z1.tokens(),
        &tau,
        &sched(t),
        OperatorKind::OffsetClean,
        &model,
        true,
        &NoiseContext { seed: 0 },
    )?;
    Ok((tr.records, cfg.model.layers))
}

/// Worst row-sum error and worst out-of-range entry of all captured maps.
pub fn attention_rows(t: usize) -> dintr_core::Result<f64> {
    let (records, _) = captured_records(t)?;
    let mut worst: f64 = 0.0;
    for r in &records {
        for m in [&r.self_map, &r.cross_map] {
            let (n, _) = m.dims2()?;
            for i in 0..n {
                let row = m.row(i);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                worst = worst.max(row.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max));
            }
        }
    }
    Ok(worst)
}

/// Mismatches between the window length and `ceil(0.8 T)` over `T = 1..=250`,
/// plus whether accumulation rejects a record set missing one step.
pub fn window_coverage() -> dintr_core::Result<usize> {
    let mut bad = (1..=250).filter(|&t| window_len(t, 0.8) != (0.8 * t as f64 - 1e-9).ceil() as usize).count();
    let (records, layers) = captured_records(10)?;
    let w = window_len(10, 0.8);
    if accumulate(&records, layers, 10, 0.8).is_err() {
        bad += 1;
    }
    let short: Vec<_> = records.iter().filter(|r| r.step != w).cloned().collect();
    if accumulate(&short, layers, 10, 0.8).is_ok() {
        bad += 1;
    }
    Ok(bad)
}

/// Distance of fused values outside `[0, 1]` over captured maps, both modes.
pub fn fused_range() -> dintr_core::Result<f64> {
    let (records, layers) = captured_records(10)?;
    let (s, x) = accumulate(&records, layers, 10, 0.8)?;
    let grid = LatentGrid { height: 16, width: 16, patch: 4 };
    let mut worst: f64 = 0.0;
    for col in 0..x.shape()[1] {
        let v: Vec<f64> = (0..x.shape()[0]).map(|i| x.at2(i, col)).collect();
        for mode in [FuseMode::Propagate, FuseMode::Elementwise] {
            let f = fuse(&s, &v, &grid, mode, 4)?;
            worst = worst.max(f.values.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max));
        }
    }
    Ok(worst)
}

fn random_saliency(rng: &mut ChaCha20Rng) -> FusedSaliency {
    let (w, h) = (rng.gen_range(2..24), rng.gen_range(2..24));
    let mut v: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
    let mx = v.iter().cloned().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= mx);
    FusedSaliency::from_values(w, h, v).expect("sized values")
}

/// Violations of segment nesting and box minimality over `n` random maps,
/// with the box checked against an exhaustive pixel scan.
pub fn mapping_properties(n: usize, seed: u64) -> dintr_core::Result<(usize, usize)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut nesting, mut minimal) = (0, 0);
    for _ in 0..n {
        let s = random_saliency(&mut rng);
        let lo = rng.gen_range(0.0..0.9);
        let hi = lo + rng.gen_range(0.0..0.1);
        let (a, b) = (segment_of(&s, lo)?, segment_of(&s, hi)?);
        if b.bits().iter().zip(a.bits()).any(|(x, y)| *x && !*y) {
            nesting += 1;
        }
        let Indicator::Box(bx) = map_to_indicator(&s, OutputKind::Box, lo)? else {
            minimal += 1;
            continue;
        };
        let cut = lo * s.values.iter().cloned().fold(0.0, f64::max);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..s.height {
            for x in 0..s.width {
                if s.values[y * s.width + x] > cut {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if bx.as_array() != [x0 as f64, y0 as f64, x1 as f64, y1 as f64] {
            minimal += 1;
        }
    }
    Ok((nesting, minimal))
}

/// Worst primitive gradient error over `seeds` input draws.
pub fn primitive_gradients(seeds: u64) -> dintr_core::Result<(f64, String)> {
    let mut worst = (0.0, String::new());
    for seed in 0..seeds {
        for (name, err) in primitive_gradient_errors(seed)? {
            if err > worst.0 {
                worst = (err, format!("{name} seed {seed}"));
            }
        }
    }
    Ok(worst)
}

/// Worst relative error of the single-step finetune objective's parameter
/// gradient against central differences on a small denoiser, alternating
/// processes and operators across seeds.
pub fn objective_gradients(seeds: u64) -> dintr_core::Result<(f64, String)> {
    let mut worst = (0.0, String::new());
    let ops = [OperatorKind::OffsetClean, OperatorKind::FromCurrent, OperatorKind::FromNext, OperatorKind::Blend];
    for seed in 0..seeds {
        let mut model = Denoiser::init(DenoiserConfig { embed_dim: 6, layers: 1, channels: 3, seed })?;
        model.set_param("w_out", seeded_noise(&[6, 3], seed, 9).scale(0.3))?;
        let (z0, z1) = pair(seed, &[5, 3]);
        let tau = seeded_noise(&[2, 6], seed, 3);
        let sc = sched(6);
        let noise = NoiseContext { seed };
        let process = if seed % 2 == 0 { ProcessKind::Interpolate } else { ProcessKind::Reconstruct };
        let cfg = FinetuneConfig { process, operator: ops[(seed / 2) as usize % ops.len()], steps: 1, lr: 0.0, seed };
        let k = 1 + (seed as usize % 5);
        let (_, grads) = objective_gradient(&model, &z0, &z1, &tau, &sc, &noise, &cfg, k)?;
        for (idx, g) in grads.iter().enumerate() {
            let numeric = finite_difference(&model.params()[idx], 1e-5, |w| {
                let mut m = model.clone();
                m.set_param(&model.names()[idx], w.clone()).expect("same shape");
                objective_gradient(&m, &z0, &z1, &tau, &sc, &noise, &cfg, k).expect("valid step").0
            });
            let err = relative_error(g, &numeric, 1e-6);
            if err > worst.0 {
                worst = (err, format!("{} seed {seed} {}", model.names()[idx], process.name()));
            }
        }
    }
    Ok(worst)
}

pub fn codec_round_trip() -> dintr_core::Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let f = Frame::new(20, 12, (0..20 * 12 * 3).map(|_| rng.gen::<f64>()).collect())?;
    let codec = Codec::default();
    let back = codec.decode(&codec.encode(&f)?)?;
    Ok(back.pixels().iter().zip(f.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn pack_split_round_trip() -> dintr_core::Result<f64> {
    let parts: Vec<Tensor> = (0..4).map(|i| seeded_noise(&[i + 1, 8], 30, i)).collect();
    let back = pack_targets(&parts)?.split()?;
    let mut worst: f64 = 0.0;
    for (a, b) in parts.iter().zip(&back) {
        worst = worst.max(a.max_abs_diff(b)?);
    }
    Ok(worst)
}

/// Runs every check; a mutation is applied where it is relevant.
pub fn run_checks(mutation: Option<Mutation>) -> VerifyReport {
    let mut checks = Vec::new();
    macro_rules! check {
        ($name:expr, $body:expr) => {
            checks.push(match $body {
                Ok(c) => c,
                Err(e) => Check::failed($name, e),
            })
        };
    }
    check!(
        "operator_equivalence",
        operator_equivalence(100, 50, mutation).map(|(d, at)| Check::at_most(
            "operator_equivalence",
            d,
            1e-9,
            format!("100 pairs, T=50, worst at {at}")
        ))
    );
    check!(
        "telescoping",
        telescoping(&[1, 5, 50, 250]).map(|d| Check::at_most(
            "telescoping",
            d,
            1e-9,
            "offset-clean ends at z_t1 for T in {1,5,50,250}"
        ))
    );
    check!(
        "stability_from_next",
        stability_from_next(50).map(|(s, f)| {
            Check::at_most(
                "stability_from_next",
                s.max(f),
                1e-9,
                format!("per-step {s:.1e}, full pass {f:.1e} vs alpha_0/alpha_T"),
            )
        })
    );
    check!(
        "stability_bounded",
        stability_bounded(50).map(|m| Check::at_most(
            "stability_bounded",
            m,
            1.0 + 1e-12,
            "blend and offset-clean amplification"
        ))
    );
    check!(
        "accumulative_chaining",
        chaining(20).map(|n| Check::at_most(
            "accumulative_chaining",
            n as f64,
            0.0,
            "steps not reproduced bitwise from predecessor"
        ))
    );
    check!(
        "identity_reconstruction",
        identity_reconstruction(50).map(|d| Check::at_most(
            "identity_reconstruction",
            d,
            1e-9,
            "network and closed-form inversion"
        ))
    );
    check!(
        "eval_counts",
        eval_counts(50).map(|(i, r, c)| {
            let off = (i as f64 - 50.0).abs() + (r as f64 - 100.0).abs() + (c as f64 - 50.0).abs();
            Check::at_most(
                "eval_counts",
                off,
                0.0,
                format!("interpolate {i}, reconstruct {r}, closed-form {c} at T=50"),
            )
        })
    );
    check!(
        "attention_row_stochastic",
        attention_rows(10).map(|d| Check::at_most(
            "attention_row_stochastic",
            d,
            1e-9,
            "self and cross maps, all layers and steps"
        ))
    );
    check!(
        "extraction_window",
        window_coverage().map(|n| Check::at_most(
            "extraction_window",
            n as f64,
            0.0,
            "window is ceil(0.8T) and coverage is enforced"
        ))
    );
    check!("fused_range", fused_range().map(|d| Check::at_most("fused_range", d, 0.0, "fused saliency inside [0, 1]")));
    check!(
        "mapping_properties",
        mapping_properties(1000, 7).map(|(n, m)| {
            Check::at_most(
                "mapping_properties",
                (n + m) as f64,
                0.0,
                format!("1000 maps: {n} nesting, {m} box-minimality violations"),
            )
        })
    );
    check!(
        "primitive_gradients",
        primitive_gradients(20).map(|(e, at)| Check::at_most(
            "primitive_gradients",
            e,
            1e-4,
            format!("20 seeds, worst {at}")
        ))
    );
    check!(
        "objective_gradients",
        objective_gradients(20).map(|(e, at)| Check::at_most(
            "objective_gradients",
            e,
            1e-4,
            format!("20 seeds, worst {at}")
        ))
    );
    check!(
        "codec_round_trip",
        codec_round_trip().map(|d| Check::at_most("codec_round_trip", d, 0.0, "encode then decode"))
    );
    check!(
        "pack_split_round_trip",
        pack_split_round_trip().map(|d| Check::at_most("pack_split_round_trip", d, 0.0, "four targets"))
    );
    VerifyReport { checks }
}
