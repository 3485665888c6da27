use bttrack_core::encoder::{Attention, ScaleLayout, TokenSequence};
use bttrack_core::tensor::ParamStore;
use bttrack_core::tracker::{
    giou, hungarian, iou, match_cost, nms, pair_loss, set_loss, to_mot_records, track_sequence, training_loss, Augment,
    Box, Decoder, DetBox, JdtModel, LossConfig, LossWeights, ModelConfig, Session, TrackSet, TrackedBox,
    TrackerConfig, TrainConfig, Trainer, BACKGROUND, OBJECT, REBIRTH_WINDOW,
};
use bttrack_core::{Error, Graph, Tensor};
use common::{brute_force_assignment, check_inputs, random_cost, rng, smooth_check};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

mod common;

fn corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Box {
    Box::from_corners(x1, y1, x2, y2).unwrap()
}

fn random_box(r: &mut ChaCha8Rng) -> Box {
    Box::new(
        r.random_range(0.1..0.9),
        r.random_range(0.1..0.9),
        r.random_range(0.05..0.5),
        r.random_range(0.05..0.5),
    )
    .unwrap()
}

fn det(b: Box) -> DetBox {
    DetBox {
        bbox: b,
        score: 0.9,
        class_logits: [2.0, -2.0],
        feature: vec![0.0; 4],
    }
}

// ---- boxes ----

#[test]
fn iou_examples() {
    let a = corners(0.0, 0.0, 2.0, 2.0);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &corners(3.0, 3.0, 4.0, 4.0)), 0.0);
    assert!((iou(&a, &corners(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn giou_examples() {
    let a = corners(0.0, 0.0, 1.0, 1.0);
    assert_eq!(giou(&a, &a), 1.0);
    assert!((giou(&a, &corners(1.0, 1.0, 2.0, 2.0)) + 0.5).abs() < 1e-15);
    // Side by side: the enclosing box equals the union, so GIoU == IoU.
    let b = corners(0.5, 0.0, 1.5, 1.0);
    assert!((giou(&a, &b) - iou(&a, &b)).abs() < 1e-15);
}

#[test]
fn box_validation() {
    assert!(Box::new(0.5, 0.5, 0.0, 0.1).is_err());
    assert!(Box::new(0.5, f64::NAN, 0.1, 0.1).is_err());
    assert!(Box::from_corners(0.0, 0.0, 0.0, 1.0).is_err());
}

#[test]
fn nms_keeps_best_of_each_cluster() {
    let boxes = [
        corners(0.0, 0.0, 1.0, 1.0),
        corners(0.05, 0.0, 1.05, 1.0),
        corners(2.0, 2.0, 3.0, 3.0),
        corners(0.0, 0.0, 1.0, 1.0),
    ];
    let scores = [0.5, 0.9, 0.4, 0.9];
    assert_eq!(nms(&boxes, &scores, 0.5), vec![1, 2]);
    assert_eq!(nms(&boxes, &scores, 1.0), vec![1, 3, 0, 2]);
    assert!(nms(&[], &[], 0.5).is_empty());
}

// ---- hungarian ----

#[test]
fn hungarian_examples() {
    let a = hungarian(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
    assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    assert_eq!(a.total, 3.0);
    let a = hungarian(&[vec![7.0]]).unwrap();
    assert_eq!((a.pairs, a.total), (vec![(0, 0)], 7.0));
    assert!(matches!(hungarian(&[vec![1.0, f64::NAN]]), Err(Error::Input(_))));
    assert!(matches!(hungarian(&[vec![1.0, 2.0], vec![1.0]]), Err(Error::Input(_))));
    let empty = hungarian(&[vec![], vec![]]).unwrap();
    assert_eq!(empty.unmatched_rows, vec![0, 1]);
}

#[test]
fn hungarian_rectangular_reports_unmatched() {
    let a = hungarian(&[vec![1.0, 5.0, 0.5], vec![2.0, 0.1, 3.0]]).unwrap();
    assert_eq!(a.pairs, vec![(0, 2), (1, 1)]);
    assert_eq!(a.unmatched_cols, vec![0]);
    let t = hungarian(&[vec![1.0, 2.0], vec![5.0, 0.1], vec![0.5, 3.0]]).unwrap();
    assert_eq!(t.pairs, vec![(1, 1), (2, 0)]);
    assert_eq!(t.unmatched_rows, vec![0]);
}

#[test]
fn hungarian_matches_brute_force_on_random_matrices() {
    for seed in 0..200 {
        let cost = random_cost(seed, 6);
        let a = hungarian(&cost).unwrap();
        let (total, pairs) = brute_force_assignment(&cost);
        assert!((a.total - total).abs() < 1e-9, "seed {seed}");
        assert_eq!(a.pairs, pairs, "seed {seed}");
    }
}

#[test]
fn hungarian_tie_break_is_lexicographic() {
    for seed in 0..200 {
        let mut r = rng(seed + 10_000);
        let (rows, cols) = (r.random_range(1..=5), r.random_range(1..=5));
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| r.random_range(0..3) as f64).collect()).collect();
        let a = hungarian(&cost).unwrap();
        let (total, pairs) = brute_force_assignment(&cost);
        assert_eq!(a.total, total, "seed {seed}");
        assert_eq!(a.pairs, pairs, "seed {seed}: {cost:?}");
    }
    let a = hungarian(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
}

// ---- matching cost and loss ----

fn pred(q: usize, logits: &[f64], boxes: &[Box]) -> (Tensor, Tensor) {
    let l = Tensor::new(vec![q, 2], logits.to_vec()).unwrap();
    let b = Tensor::new(vec![q, 4], boxes.iter().flat_map(|b| b.to_array()).collect()).unwrap();
    (l, b)
}

#[test]
fn match_cost_examples() {
    let b = Box::new(0.5, 0.5, 0.2, 0.2).unwrap();
    let (l, bx) = pred(1, &[1000.0, -1000.0], &[b]);
    let w = LossWeights::new(2.0, 5.0, 2.0).unwrap();
    assert_eq!(match_cost(&l, &bx, &[b], &w).unwrap(), vec![vec![-2.0]]);
    let shifted = Box::new(0.6, 0.5, 0.2, 0.2).unwrap();
    let w = LossWeights::new(0.0, 1.0, 0.0).unwrap();
    let c = match_cost(&l, &bx, &[shifted], &w).unwrap();
    assert!((c[0][0] - 0.1).abs() < 1e-12);
    assert_eq!(match_cost(&l, &bx, &[], &w).unwrap(), vec![Vec::<f64>::new()]);
}

#[test]
fn match_cost_hungarian_on_random_3x2() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let boxes: Vec<Box> = (0..3).map(|_| random_box(&mut r)).collect();
        let gt: Vec<Box> = (0..2).map(|_| random_box(&mut r)).collect();
        let logits: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let (l, b) = pred(3, &logits, &boxes);
        let cost = match_cost(&l, &b, &gt, &LossWeights::default()).unwrap();
        let a = hungarian(&cost).unwrap();
        let (total, pairs) = brute_force_assignment(&cost);
        assert!((a.total - total).abs() < 1e-9);
        assert_eq!(a.pairs, pairs);
    }
}

#[test]
fn loss_weights_validation() {
    assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
    assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
    assert!(LossWeights::new(0.0, 0.0, 1.0).is_ok());
}

fn loss_value(logits: &[f64], boxes: &[Box], gt: &[Box], cfg: &LossConfig) -> f64 {
    let q = boxes.len();
    let (l, b) = pred(q, logits, boxes);
    let mut g = Graph::new();
    let (lv, bv) = (g.constant(l), g.constant(b));
    let loss = training_loss(&mut g, &[(lv, bv, gt)], gt.len(), cfg).unwrap();
    g.value(loss).item()
}

#[test]
fn perfect_predictions_have_zero_loss() {
    let gt = [Box::new(0.3, 0.3, 0.2, 0.2).unwrap(), Box::new(0.7, 0.6, 0.1, 0.3).unwrap()];
    let spare = Box::new(0.5, 0.5, 0.1, 0.1).unwrap();
    let logits = [1000.0, -1000.0, -1000.0, 1000.0, 1000.0, -1000.0];
    let v = loss_value(&logits, &[gt[0], spare, gt[1]], &gt, &LossConfig::default());
    assert_eq!(v, 0.0);
}

#[test]
fn empty_frame_is_background_only() {
    let boxes = [Box::new(0.3, 0.3, 0.2, 0.2).unwrap(), Box::new(0.5, 0.5, 0.1, 0.1).unwrap()];
    let logits = [0.5, -0.2, 1.0, 1.0];
    let cfg = LossConfig::default();
    let v = loss_value(&logits, &boxes, &[], &cfg);
    let bg_nll = |l: &[f64]| {
        let m = l[0].max(l[1]);
        let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
        lse - l[BACKGROUND]
    };
    let expected = cfg.weights.lambda_class * cfg.background_weight * (bg_nll(&logits[..2]) + bg_nll(&logits[2..]));
    assert!((v - expected).abs() < 1e-12);
    assert_eq!(OBJECT, 1 - BACKGROUND);
}

#[test]
fn loss_is_normalized_by_object_count() {
    let gt = [Box::new(0.3, 0.3, 0.2, 0.2).unwrap(), Box::new(0.7, 0.6, 0.1, 0.3).unwrap()];
    let boxes = [Box::new(0.35, 0.3, 0.2, 0.25).unwrap(), Box::new(0.6, 0.6, 0.1, 0.2).unwrap()];
    let logits = [0.3, 0.1, -0.4, 0.2];
    let cfg = LossConfig::default();
    let (l, b) = pred(2, &logits, &boxes);
    let mut g = Graph::new();
    let (lv, bv) = (g.constant(l), g.constant(b));
    let (raw, _) = set_loss(&mut g, lv, bv, &gt, &cfg).unwrap();
    let raw = g.value(raw).item();
    assert!((loss_value(&logits, &boxes, &gt, &cfg) - raw / 2.0).abs() < 1e-12);
}

#[test]
fn training_loss_needs_a_term() {
    let mut g = Graph::new();
    assert!(matches!(training_loss(&mut g, &[], 0, &LossConfig::default()), Err(Error::Input(_))));
}

#[test]
fn pair_loss_is_finite_for_empty_and_busy_frames() {
    let model = JdtModel::new(ModelConfig::default(), 3).unwrap();
    let img = Tensor::uniform(&mut rng(4), &[1, 3, 64, 64], 0.0, 1.0).unwrap();
    let gt = [Box::new(0.3, 0.3, 0.2, 0.2).unwrap()];
    for (a, b) in [(&[][..], &[][..]), (&gt[..], &[][..]), (&gt[..], &gt[..])] {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let l = pair_loss(&model, &mut g, &p, (&img, a), (&img, b), &LossConfig::default()).unwrap();
        assert!(g.value(l).item().is_finite());
        g.backward(l).unwrap();
    }
}

#[test]
fn overfitting_one_pair_drives_loss_below_ten_percent() {
    let seq = bttrack_core::synth::generate(&bttrack_core::synth::SceneConfig {
        frames: 2,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let clip = seq.to_clip();
    let mut model = JdtModel::new(ModelConfig::default(), 0).unwrap();
    let mut trainer = Trainer::new(
        &model,
        TrainConfig {
            steps: 200,
            augment: false,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let pair = |m: &mut JdtModel, t: &mut Trainer| {
        t.step(m, (&clip.frames[0], &clip.boxes[0]), (&clip.frames[1], &clip.boxes[1])).unwrap()
    };
    let first = pair(&mut model, &mut trainer);
    let mut last = first;
    for _ in 1..200 {
        last = pair(&mut model, &mut trainer);
    }
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

// ---- association and rebirth ----

#[test]
fn exact_detection_matches_track() {
    let mut ts = TrackSet::default();
    let b = Box::new(0.5, 0.5, 0.2, 0.2).unwrap();
    ts.associate(&[det(b)], 0.5).unwrap();
    ts.tracks[0].unmatched_streak = 3;
    let a = ts.associate(&[det(b)], 0.5).unwrap();
    assert_eq!(a.matched, vec![(0, 1)]);
    assert!(a.spawned.is_empty());
    assert_eq!(ts.tracks[0].unmatched_streak, 0);
}

#[test]
fn no_detections_age_every_track() {
    let mut ts = TrackSet::default();
    let mut r = rng(1);
    let dets: Vec<DetBox> = (0..3).map(|_| det(random_box(&mut r))).collect();
    ts.associate(&dets, 0.5).unwrap();
    let next = ts.next_id;
    let a = ts.associate(&[], 0.5).unwrap();
    assert!(a.matched.is_empty() && a.spawned.is_empty());
    assert!(ts.tracks.iter().all(|t| t.unmatched_streak == 1));
    assert_eq!(ts.next_id, next);
}

#[test]
fn association_maximizes_gated_iou() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let tracks: Vec<Box> = (0..2).map(|_| random_box(&mut r)).collect();
        let dets: Vec<Box> = tracks
            .iter()
            .chain(tracks.iter())
            .take(3)
            .map(|b| {
                Box::new(
                    b.cx + r.random_range(-0.08..0.08),
                    b.cy + r.random_range(-0.08..0.08),
                    b.w * r.random_range(0.7..1.3),
                    b.h * r.random_range(0.7..1.3),
                )
                .unwrap()
            })
            .collect();
        let mut ts = TrackSet::default();
        ts.associate(&tracks.iter().copied().map(det).collect::<Vec<_>>(), 0.5).unwrap();
        let a = ts.associate(&dets.iter().copied().map(det).collect::<Vec<_>>(), 0.5).unwrap();
        let gated = |d: usize, t: usize| {
            let v = iou(&dets[d], &tracks[t]);
            if v >= 0.5 {
                v
            } else {
                0.0
            }
        };
        let got: f64 = a.matched.iter().map(|&(d, id)| gated(d, id as usize - 1)).sum();
        let mut best: f64 = 0.0;
        for d0 in 0..=3 {
            for d1 in 0..=3 {
                if d0 == d1 && d0 < 3 {
                    continue;
                }
                let v = if d0 < 3 { gated(d0, 0) } else { 0.0 } + if d1 < 3 { gated(d1, 1) } else { 0.0 };
                best = best.max(v);
            }
        }
        assert!((got - best).abs() < 1e-12, "seed {seed}");
        for &(d, id) in &a.matched {
            assert!(iou(&dets[d], &tracks[id as usize - 1]) >= 0.5);
        }
        assert_eq!(a.matched.len() + a.spawned.len(), 3);
    }
}

#[test]
fn rebirth_window_boundary() {
    let b = Box::new(0.5, 0.5, 0.2, 0.2).unwrap();
    let mut ts = TrackSet::default();
    ts.associate(&[det(b)], 0.5).unwrap();
    ts.rebirth_step();
    for _ in 0..REBIRTH_WINDOW {
        ts.associate(&[], 0.5).unwrap();
        ts.rebirth_step();
    }
    assert_eq!(ts.tracks[0].unmatched_streak, 32);
    assert!(ts.tracks[0].alive);
    assert!(ts.visible().is_empty());
    ts.associate(&[], 0.5).unwrap();
    ts.rebirth_step();
    assert_eq!(ts.alive().count(), 0);
    let a = ts.associate(&[det(b)], 0.5).unwrap();
    assert_eq!(a.spawned, vec![(0, 2)]);
}

#[test]
fn rematch_after_short_gap_keeps_id() {
    let b = Box::new(0.5, 0.5, 0.2, 0.2).unwrap();
    let mut ts = TrackSet::default();
    ts.associate(&[det(b)], 0.5).unwrap();
    for _ in 0..5 {
        ts.associate(&[], 0.5).unwrap();
        ts.rebirth_step();
    }
    assert_eq!(ts.tracks[0].unmatched_streak, 5);
    let a = ts.associate(&[det(b)], 0.5).unwrap();
    assert_eq!(a.matched, vec![(0, 1)]);
    assert_eq!(ts.visible()[0].id, 1);
}

#[test]
fn oracle_boxes_keep_identity_across_frames() {
    let mut ts = TrackSet::default();
    let a = Box::new(0.30, 0.40, 0.2, 0.2).unwrap();
    let b = Box::new(0.70, 0.60, 0.15, 0.25).unwrap();
    ts.associate(&[det(a), det(b)], 0.5).unwrap();
    let a2 = Box::new(0.32, 0.41, 0.2, 0.2).unwrap();
    let b2 = Box::new(0.69, 0.62, 0.15, 0.25).unwrap();
    let m = ts.associate(&[det(b2), det(a2)], 0.5).unwrap();
    assert_eq!(m.matched, vec![(0, 2), (1, 1)]);
}

// ---- decoder ----

#[test]
fn single_query_single_token_cross_attention_weight_is_one() {
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut store, "x", 8, 2, false, &mut rng(0)).unwrap();
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let q = g.constant(Tensor::randn(&mut rng(1), &[1, 1, 8], 1.0).unwrap());
    let m = g.constant(Tensor::randn(&mut rng(2), &[1, 1, 8], 1.0).unwrap());
    let out = attn.forward(&mut g, &p, q, m, m).unwrap();
    assert!(g.value(out.weights).data().iter().all(|&w| w == 1.0));
}

fn decoder_inputs(seed: u64, q: usize) -> (ScaleLayout, Tensor, Tensor, Tensor) {
    let layout = ScaleLayout::new([(2, 2), (1, 2), (1, 1), (1, 1)], 8).unwrap();
    let mut r = rng(seed);
    let queries = Tensor::randn(&mut r, &[1, q, 8], 1.0).unwrap();
    let refs = Tensor::randn(&mut r, &[1, q, 2], 1.0).unwrap();
    let memory = Tensor::randn(&mut r, &[1, layout.token_count(), 8], 1.0).unwrap();
    (layout, queries, refs, memory)
}

#[test]
fn decoder_boxes_are_bounded_and_shapes_hold() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, "dec", 2, 8, 2, &mut rng(seed)).unwrap();
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 5.0);
        }
        let (layout, q, refs, mem) = decoder_inputs(seed + 100, 5);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let (q, refs) = (g.constant(q), g.constant(refs));
        let memory = TokenSequence {
            data: g.constant(mem),
            layout,
        };
        let out = dec.forward(&mut g, &p, q, refs, &memory).unwrap();
        assert_eq!(g.shape(out.logits), &[1, 5, 2]);
        assert_eq!(g.shape(out.boxes), &[1, 5, 4]);
        assert!(g.value(out.boxes).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for w in &out.cross_weights {
            for row in g.value(*w).data().chunks(layout.token_count()) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn decoder_rejects_bad_shapes() {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, "dec", 1, 8, 2, &mut rng(0)).unwrap();
    let (layout, q, _, mem) = decoder_inputs(1, 3);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let q = g.constant(q);
    let bad_refs = g.constant(Tensor::zeros(&[1, 2, 2]).unwrap());
    let memory = TokenSequence {
        data: g.constant(mem),
        layout,
    };
    assert!(matches!(dec.forward(&mut g, &p, q, bad_refs, &memory), Err(Error::Dimension(_))));
}

#[test]
fn two_layer_decoder_grad_check() {
    for seed in 0..3 {
        let err = smooth_check(seed, |s| {
            let mut store = ParamStore::new();
            let dec = Decoder::new(&mut store, "dec", 2, 8, 2, &mut rng(s)).unwrap();
            let (layout, q, refs, mem) = decoder_inputs(s + 100, 3);
            check_inputs(&store, vec![q, refs, mem], s, |g, p, x| {
                let memory = TokenSequence { data: x[2], layout };
                let out = dec.forward(g, p, x[0], x[1], &memory)?;
                g.concat(&[out.logits, out.boxes], 2)
            })
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

// ---- session ----

fn frames(seed: u64, n: usize) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..n).map(|_| Tensor::uniform(&mut r, &[1, 3, 64, 64], 0.0, 1.0).unwrap()).collect()
}

#[test]
fn first_frame_spawns_fresh_ids() {
    let model = JdtModel::new(ModelConfig::default(), 5).unwrap();
    let cfg = TrackerConfig {
        score_threshold: 0.0,
        nms_threshold: 1.0,
        ..TrackerConfig::default()
    };
    let out = track_sequence(&model, &frames(1, 1), cfg).unwrap();
    let ids: Vec<u64> = out[0].iter().map(|t| t.id).collect();
    assert_eq!(ids, (1..=model.config.num_queries as u64).collect::<Vec<_>>());

    let out = track_sequence(&model, &frames(1, 1), TrackerConfig { score_threshold: 0.0, ..TrackerConfig::default() }).unwrap();
    let ids: Vec<u64> = out[0].iter().map(|t| t.id).collect();
    assert_eq!(ids, (1..=ids.len() as u64).collect::<Vec<_>>());
    for (i, a) in out[0].iter().enumerate() {
        for b in &out[0][i + 1..] {
            assert!(iou(&a.bbox, &b.bbox) <= TrackerConfig::default().nms_threshold);
        }
    }
}

#[test]
fn session_rejects_out_of_order_frames() {
    let model = JdtModel::new(ModelConfig::default(), 6).unwrap();
    let f = frames(2, 1).remove(0);
    let mut s = Session::new(&model, TrackerConfig::default());
    s.step(3, &f).unwrap();
    assert!(matches!(s.step(3, &f), Err(Error::Input(_))));
    assert!(matches!(s.step(2, &f), Err(Error::Input(_))));
    s.step(4, &f).unwrap();
    let batch = Tensor::zeros(&[2, 3, 64, 64]).unwrap();
    assert!(matches!(s.step(5, &batch), Err(Error::Dimension(_))));
}

#[test]
fn tracking_is_deterministic_and_ids_unique_per_frame() {
    let model = JdtModel::new(ModelConfig::default(), 7).unwrap();
    let cfg = TrackerConfig {
        score_threshold: 0.3,
        ..TrackerConfig::default()
    };
    let fs = frames(3, 4);
    let a = track_sequence(&model, &fs, cfg).unwrap();
    let b = track_sequence(&model, &fs, cfg).unwrap();
    assert_eq!(a, b);
    for frame in &a {
        let mut ids: Vec<u64> = frame.iter().map(|t| t.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), frame.len());
    }
}

#[test]
fn mot_records_scale_boxes() {
    let t = TrackedBox {
        id: 4,
        bbox: Box::new(0.5, 0.25, 0.5, 0.25).unwrap(),
        score: 0.8,
    };
    let recs = to_mot_records(&[vec![], vec![t]], 64, 128);
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!((r.frame, r.id), (2, 4));
    assert_eq!((r.left, r.top, r.width, r.height), (16.0, 16.0, 32.0, 32.0));
    assert_eq!(r.conf, 0.8);
}

// ---- augmentation ----

fn draw(b: &Box, size: usize, color: [f64; 3]) -> Tensor {
    let [x1, y1, x2, y2] = b.scaled(size as f64, size as f64).corners();
    let mut t = Tensor::zeros(&[1, 3, size, size]).unwrap();
    for c in 0..3 {
        for y in y1 as usize..y2 as usize {
            for x in x1 as usize..x2 as usize {
                t.data_mut()[(c * size + y) * size + x] = color[c];
            }
        }
    }
    t
}

#[test]
fn augmentation_moves_pixels_and_boxes_together() {
    let b = corners(8.0 / 64.0, 4.0 / 64.0, 24.0 / 64.0, 40.0 / 64.0);
    let color = [0.1, 0.5, 0.9];
    let img = draw(&b, 64, color);
    let mut r = rng(3);
    for _ in 0..32 {
        let a = Augment::random(&mut r, true);
        let out = a.image(&img).unwrap();
        let moved = a.boxes(&[b])[0];
        let permuted = [0, 1, 2].map(|k| color[a.channels[k]]);
        assert_eq!(out, draw(&moved, 64, permuted), "{a:?}");
    }
    assert_eq!(Augment::IDENTITY.image(&img).unwrap(), img);
    assert_eq!(Augment::IDENTITY.boxes(&[b]), vec![b]);
}

#[test]
fn augmentation_never_transposes_non_square_images() {
    let mut r = rng(4);
    for _ in 0..64 {
        assert!(!Augment::random(&mut r, false).transpose);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn giou_bounded_and_below_iou(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let (a, b) = (random_box(&mut r), random_box(&mut r));
        let (i, gi) = (iou(&a, &b), giou(&a, &b));
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((-1.0..=1.0).contains(&gi));
        prop_assert!(gi <= i + 1e-15);
        prop_assert!((0.0..=2.0).contains(&(1.0 - gi)));
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn hungarian_invariant_under_uniform_shift(seed in 0u64..100_000, shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..=6);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(0.0..10.0)).collect()).collect();
        let shifted: Vec<Vec<f64>> = cost.iter().map(|row| row.iter().map(|v| v + shift).collect()).collect();
        prop_assert_eq!(hungarian(&cost).unwrap().pairs, hungarian(&shifted).unwrap().pairs);
    }

    #[test]
    fn loss_permutation_invariant_and_linear_in_lambda(seed in 0u64..100_000, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let q = 4;
        let boxes: Vec<Box> = (0..q).map(|_| random_box(&mut r)).collect();
        let logits: Vec<f64> = (0..2 * q).map(|_| r.random_range(-2.0..2.0)).collect();
        let gt: Vec<Box> = (0..r.random_range(0..=3)).map(|_| random_box(&mut r)).collect();
        let cfg = LossConfig::default();
        let base = loss_value(&logits, &boxes, &gt, &cfg);

        let mut rgt = gt.clone();
        rgt.reverse();
        prop_assert!((loss_value(&logits, &boxes, &rgt, &cfg) - base).abs() < 1e-10);

        let order = [2, 0, 3, 1];
        let pboxes: Vec<Box> = order.iter().map(|&i| boxes[i]).collect();
        let plogits: Vec<f64> = order.iter().flat_map(|&i| [logits[2 * i], logits[2 * i + 1]]).collect();
        prop_assert!((loss_value(&plogits, &pboxes, &gt, &cfg) - base).abs() < 1e-10);

        let scaled = LossConfig { weights: cfg.weights.scaled(scale), ..cfg };
        prop_assert!((loss_value(&logits, &boxes, &gt, &scaled) - scale * base).abs() < 1e-9 * (1.0 + base.abs() * scale));
        let (l, b) = pred(q, &logits, &boxes);
        let m1 = hungarian(&match_cost(&l, &b, &gt, &cfg.weights).unwrap()).unwrap().pairs;
        let m2 = hungarian(&match_cost(&l, &b, &gt, &scaled.weights).unwrap()).unwrap().pairs;
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn association_is_one_to_one_and_ids_unique(seed in 0u64..100_000, frames in 1usize..8) {
        let mut r = rng(seed);
        let mut ts = TrackSet::default();
        let mut seen = std::collections::HashSet::new();
        let mut last_next = ts.next_id;
        for _ in 0..frames {
            let dets: Vec<DetBox> = (0..r.random_range(0..5)).map(|_| det(random_box(&mut r))).collect();
            let a = ts.associate(&dets, 0.3).unwrap();
            ts.rebirth_step();
            let mut det_ids: Vec<usize> = a.matched.iter().map(|m| m.0).chain(a.spawned.iter().map(|s| s.0)).collect();
            det_ids.sort();
            prop_assert_eq!(det_ids, (0..dets.len()).collect::<Vec<_>>());
            let mut tracks: Vec<u64> = a.matched.iter().map(|m| m.1).collect();
            tracks.sort();
            tracks.dedup();
            prop_assert_eq!(tracks.len(), a.matched.len());
            for &(_, id) in &a.spawned {
                prop_assert!(id >= last_next);
                prop_assert!(seen.insert(id));
            }
            last_next = ts.next_id;
        }
    }
}
