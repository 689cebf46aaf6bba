use dintr_core::codec::Frame;
use dintr_core::conditioning::{BoxRegion, Indicator, Point, VocabTable};
use dintr_core::config::RunConfig;
use dintr_core::denoiser::Denoiser;
use dintr_core::metrics::{box_iou, id_consistency};
use dintr_core::synthvid::{render, Clip, SceneSpec};
use dintr_core::tracker::{bootstrap_from_text, track_sequence};
use dintr_core::Error;

/// Shorter schedule and finetune budget than the defaults, for test speed.
fn quick() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.schedule.t = 20;
    cfg.engine.finetune_steps = 10;
    cfg
}

fn clip(spec: SceneSpec, frames: usize) -> Clip {
    let mut spec = spec;
    spec.frames = frames;
    render(&spec).unwrap()
}

fn truth_point(c: &Clip, t: usize, id: usize) -> [f64; 2] {
    c.truth[t].targets[id].point.unwrap()
}

fn start_point(c: &Clip, id: usize) -> Indicator {
    let [x, y] = truth_point(c, 0, id);
    Indicator::Point(Point { x, y })
}

fn predicted_points(run: &dintr_core::tracker::TrackRun, id: usize) -> Vec<[f64; 2]> {
    run.records().iter().map(|r| r.targets[id].point.unwrap()).collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[test]
fn static_sequence_keeps_point_in_place() {
    let c = clip(SceneSpec::default_disc(), 1);
    let frames = vec![c.frames[0].clone(); 5];
    let run = track_sequence(&frames, &[start_point(&c, 0)], &quick(), None).unwrap();
    for p in predicted_points(&run, 0) {
        assert!(dist(p, truth_point(&c, 0, 0)) <= 2.0, "drifted to {p:?}");
    }
}

#[test]
fn moving_disc_beats_carry_forward() {
    let c = clip(SceneSpec::default_disc(), 10);
    let run = track_sequence(&c.frames, &[start_point(&c, 0)], &quick(), None).unwrap();
    let pred = predicted_points(&run, 0);
    let start = truth_point(&c, 0, 0);
    let (mut ours, mut carry) = (0.0, 0.0);
    for (t, p) in pred.iter().enumerate().skip(1) {
        ours += dist(*p, truth_point(&c, t, 0));
        carry += dist(start, truth_point(&c, t, 0));
    }
    assert!(ours < carry, "tracked error {ours} vs carry-forward {carry}");
}

#[test]
fn prefix_of_sequence_tracks_identically() {
    let c = clip(SceneSpec::default_disc(), 6);
    let b = c.truth[0].targets[0].bbox.unwrap();
    let init = [Indicator::Box(BoxRegion::from_array(b))];
    let long = track_sequence(&c.frames, &init, &quick(), None).unwrap().records();
    let short = track_sequence(&c.frames[..3], &init, &quick(), None).unwrap().records();
    assert_eq!(&long[..3], &short[..]);
}

#[test]
fn two_targets_keep_identities() {
    let c = clip(SceneSpec::two_discs(), 8);
    let init = [start_point(&c, 0), start_point(&c, 1)];
    let both = track_sequence(&c.frames, &init, &quick(), None).unwrap();
    let ids = id_consistency(&both.records(), &c.truth, (64, 64), 0.5, 8.0).unwrap();
    assert_eq!(ids.switches, 0);
    assert_eq!(ids.matched, 2 * 8, "every target matched on every frame");
    for id in 0..2 {
        let alone = track_sequence(&c.frames, &init[id..id + 1], &quick(), None).unwrap();
        let (pb, pa) = (predicted_points(&both, id), predicted_points(&alone, 0));
        for t in 1..8 {
            let gt = truth_point(&c, t, id);
            assert!(dist(pb[t], gt) <= 4.0, "joint run target {id} frame {t}: {:?} vs {gt:?}", pb[t]);
            assert!(dist(pa[t], gt) <= 4.0, "single run target {id} frame {t}: {:?} vs {gt:?}", pa[t]);
        }
    }
}

/// Vocabulary whose word 1 is the projected token of a flat patch of `rgb`.
fn colour_vocab(cfg: &RunConfig, rgb: [f64; 3]) -> VocabTable {
    let model = Denoiser::init(cfg.denoiser_config()).unwrap();
    let patch: Vec<f64> = (0..cfg.model.patch * cfg.model.patch).flat_map(|_| rgb).collect();
    let token = dintr_core::numerics::Tensor::new(vec![1, patch.len()], patch).unwrap();
    let row = token.matmul(model.input_projection()).unwrap();
    let mut vocab = VocabTable::new(4, cfg.model.embed_dim, 9).unwrap();
    vocab.bind(1, row.data()).unwrap();
    vocab
}

#[test]
fn text_bootstrap_finds_single_object() {
    let cfg = quick();
    let c = clip(SceneSpec::default_disc(), 2);
    let vocab = colour_vocab(&cfg, [0.9, 0.3, 0.2]);
    let boxes = bootstrap_from_text(&c.frames[0], &c.frames[1], &[1], &vocab, &cfg).unwrap();
    assert_eq!(boxes.len(), 1);
    let gt = c.truth[0].targets[0].bbox.unwrap();
    assert!(box_iou(&boxes[0].as_array(), &gt) > 0.3, "{:?} vs {gt:?}", boxes[0]);
}

#[test]
fn text_bootstrap_fails_on_empty_frame() {
    let cfg = quick();
    let blank = Frame::filled(64, 64, [0.0; 3]);
    let vocab = colour_vocab(&cfg, [0.9, 0.3, 0.2]);
    let err = bootstrap_from_text(&blank, &blank, &[1], &vocab, &cfg).unwrap_err();
    assert!(matches!(err, Error::BootstrapFailed(_)), "{err:?}");
}

#[test]
fn text_bootstrap_proposes_two_objects() {
    let mut cfg = quick();
    cfg.tracker.text_targets = 2;
    let mut spec = SceneSpec::two_discs();
    spec.objects[1].color = spec.objects[0].color;
    let c = clip(spec, 2);
    let vocab = colour_vocab(&cfg, [0.9, 0.3, 0.2]);
    let boxes = bootstrap_from_text(&c.frames[0], &c.frames[1], &[1], &vocab, &cfg).unwrap();
    assert_eq!(boxes.len(), 2);
    for target in &c.truth[0].targets {
        let gt = target.bbox.unwrap();
        let best = boxes.iter().map(|b| box_iou(&b.as_array(), &gt)).fold(0.0, f64::max);
        assert!(best > 0.3, "no proposal covers {gt:?}: {boxes:?}");
    }
}

#[test]
fn text_prompt_tracks_through_sequence() {
    let cfg = quick();
    let c = clip(SceneSpec::default_disc(), 4);
    let vocab = colour_vocab(&cfg, [0.9, 0.3, 0.2]);
    let run = track_sequence(&c.frames, &[Indicator::Text(vec![1])], &cfg, Some(&vocab)).unwrap();
    let recs = run.records();
    assert_eq!(recs.len(), 4);
    for (t, r) in recs.iter().enumerate() {
        let gt = c.truth[t].targets[0].bbox.unwrap();
        assert!(box_iou(&r.targets[0].bbox.unwrap(), &gt) > 0.3, "frame {t}");
    }
}

#[test]
fn text_without_vocabulary_is_rejected() {
    let c = clip(SceneSpec::default_disc(), 2);
    let err = track_sequence(&c.frames, &[Indicator::Text(vec![1])], &quick(), None).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}
