mod common;

use common::{rand_tensor, rng};
use densecap_core::autograd::Graph;
use densecap_core::geometry::{giou, Segment};
use densecap_core::heads::LocalizationOutput;
use densecap_core::loss::{layer_loss, LayerTargets, LossWeights};
use densecap_core::matching::{focal_loss, Matching};
use densecap_core::model::{DenseCaptioner, GroundTruth, Objective};
use densecap_core::params::ParamStore;
use densecap_core::tensor::Tensor;
use densecap_core::config::ModelConfig;
use rand::Rng;

struct Instance {
    start: Vec<f64>,
    end: Vec<f64>,
    logits: Vec<f64>,
    count_logits: Vec<f64>,
    nll: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    gts: Vec<Segment<f64>>,
    max_count: usize,
}

fn evaluate(inst: &Instance, w: &LossWeights) -> (f64, densecap_core::loss::LossComponents) {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    let col = |g: &mut Graph<'_, f64>, v: &[f64]| g.constant(Tensor::column(v.to_vec()));
    let start = col(&mut g, &inst.start);
    let end = col(&mut g, &inst.end);
    let loc = LocalizationOutput {
        center: start,
        length: end,
        start,
        end,
        logits: col(&mut g, &inst.logits),
    };
    let counts = g.constant(Tensor::row_vector(inst.count_logits.clone()));
    let nll = (!inst.nll.is_empty()).then(|| col(&mut g, &inst.nll));
    let matching = Matching {
        pairs: inst.pairs.clone(),
        total_cost: 0.0,
    };
    let targets = LayerTargets {
        matching: &matching,
        segments: Some(&inst.gts),
        num_events: inst.gts.len(),
        max_count: inst.max_count,
    };
    let out = layer_loss(&mut g, &loc, counts, nll, targets, w);
    (g.item(out.total), out.components)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn perfect_predictions_give_near_zero_loss() {
    let eps: f64 = 1e-4;
    let w = LossWeights::default();
    // Count logits giving probability 1 - eps to the true count 2.
    let others: f64 = 3.0;
    let big = ((1.0 - eps) * others / eps).ln();
    let inst = Instance {
        start: vec![0.1, 0.5],
        end: vec![0.3, 0.9],
        logits: vec![logit(1.0 - eps); 2],
        count_logits: vec![0.0, 0.0, big, 0.0],
        nll: vec![-(1.0 - eps).ln(); 2],
        pairs: vec![(0, 0), (1, 1)],
        gts: vec![Segment { start: 0.1, end: 0.3 }, Segment { start: 0.5, end: 0.9 }],
        max_count: 3,
    };
    let (total, comp) = evaluate(&inst, &w);
    assert!(total < 10.0 * eps * w.sum(), "{total} {comp:?}");
    assert!(comp.giou.abs() < 1e-12);
}

fn random_instance(r: &mut rand_chacha::ChaCha8Rng) -> Instance {
    let n = 4;
    let mut start = Vec::new();
    let mut end = Vec::new();
    for _ in 0..n {
        let a: f64 = r.random_range(0.0..1.0);
        let b: f64 = r.random_range(0.0..1.0);
        start.push(a.min(b));
        end.push(a.max(b));
    }
    Instance {
        start,
        end,
        logits: (0..n).map(|_| r.random_range(-3.0..3.0)).collect(),
        count_logits: (0..5).map(|_| r.random_range(-2.0..2.0)).collect(),
        nll: vec![r.random_range(0.1..3.0), r.random_range(0.1..3.0)],
        pairs: vec![(1, 1), (3, 0)],
        gts: vec![Segment { start: 0.05, end: 0.4 }, Segment { start: 0.6, end: 0.95 }],
        max_count: 4,
    }
}

#[test]
fn doubling_weights_doubles_total() {
    let mut r = rng(1);
    for _ in 0..20 {
        let inst = random_instance(&mut r);
        let w = LossWeights::default();
        let (a, _) = evaluate(&inst, &w);
        let (b, _) = evaluate(&inst, &w.scaled(2.0));
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn matches_straight_line_recomputation() {
    let mut r = rng(2);
    let inst = random_instance(&mut r);
    let w = LossWeights::default();
    let (total, comp) = evaluate(&inst, &w);

    let mut giou_sum = 0.0;
    for &(q, t) in &inst.pairs {
        let p = Segment { start: inst.start[q], end: inst.end[q] };
        giou_sum += 1.0 - giou(&p, &inst.gts[t]).unwrap();
    }
    let l_giou = giou_sum / 2.0;
    let mut focal = 0.0;
    for (i, &z) in inst.logits.iter().enumerate() {
        let positive = inst.pairs.iter().any(|&(q, _)| q == i);
        focal += focal_loss(1.0 / (1.0 + (-z).exp()), positive, 0.25, 2.0);
    }
    let l_cls = focal / 2.0;
    let mx = inst.count_logits.iter().copied().fold(f64::MIN, f64::max);
    let lse = mx + inst.count_logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    let l_ec = lse - inst.count_logits[2];
    let l_cap = (inst.nll[0] + inst.nll[1]) / 2.0;
    let expected = 2.0 * l_giou + l_cls + l_ec + l_cap;
    assert!((comp.giou - l_giou).abs() < 1e-12);
    assert!((comp.cls - l_cls).abs() < 1e-12);
    assert!((comp.count - l_ec).abs() < 1e-12);
    assert!((comp.caption - l_cap).abs() < 1e-12);
    assert!((total - expected).abs() < 1e-12);
}

#[test]
fn classification_term_ignores_query_order_for_identical_predictions() {
    let mut r = rng(3);
    let mut inst = random_instance(&mut r);
    inst.logits = vec![0.7; 4];
    let w = LossWeights::default();
    let (_, base) = evaluate(&inst, &w);
    for pairs in [vec![(0, 0), (1, 1)], vec![(2, 1), (3, 0)], vec![(1, 0), (2, 1)]] {
        inst.pairs = pairs;
        let (_, c) = evaluate(&inst, &w);
        assert!((c.cls - base.cls).abs() < 1e-12);
    }
}

#[test]
fn model_loss_handles_empty_and_oversized_ground_truth() {
    let cfg = ModelConfig {
        temporal_length: 16,
        num_levels: 2,
        d_model: 16,
        ffn_dim: 32,
        heads: 2,
        num_queries: 3,
        max_count: 4,
        input_dim: 5,
        norm_groups: 4,
        ..ModelConfig::default()
    };
    let model = DenseCaptioner::<f64>::new(cfg, 4).unwrap();
    let mut r = rng(4);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let obj = Objective::default();

    let empty = GroundTruth { segments: vec![], captions: vec![] };
    let mut g = Graph::new(&model.params);
    let out = model.network.forward(&mut g, &frames).unwrap();
    let loss = model.network.set_loss(&mut g, &out, &empty, &obj).unwrap();
    assert!(loss.matchings.iter().all(|m| m.is_empty()));
    assert_eq!(loss.loss.components.giou, 0.0);
    assert_eq!(loss.loss.components.caption, 0.0);
    assert!(loss.loss.components.cls > 0.0 && loss.loss.components.count > 0.0);
    assert!(g.backward(loss.loss.total).params().is_finite());

    // Five events, three queries: every query is matched.
    let segs: Vec<Segment<f64>> = (0..5).map(|i| Segment { start: i as f64 * 0.2, end: i as f64 * 0.2 + 0.15 }).collect();
    let many = GroundTruth {
        captions: vec![vec![5, 6, 2]; 5],
        segments: segs,
    };
    let mut g = Graph::new(&model.params);
    let out = model.network.forward(&mut g, &frames).unwrap();
    let loss = model.network.set_loss(&mut g, &out, &many, &obj).unwrap();
    assert!(loss.matchings.iter().all(|m| m.len() == 3));
    assert!(loss.loss.components.total.is_finite());
}
