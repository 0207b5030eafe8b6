mod common;

use common::{rand_tensor, randomize, rng};
use densecap_core::config::ModelConfig;
use densecap_core::geometry::Segment;
use densecap_core::heads::{tokens, CaptionHypothesis, CountPrediction, EventDetection};
use densecap_core::inference::{event_confidence, paragraph_events, select_events, RankingConfig};
use densecap_core::model::DenseCaptioner;
use densecap_core::tensor::Tensor;
use rand::Rng;

fn det(start: f64, end: f64, conf: f64, i: usize) -> EventDetection<f64> {
    EventDetection {
        segment: Segment { start, end },
        loc_confidence: conf,
        query_index: i,
    }
}

fn cap(probs: &[f64]) -> CaptionHypothesis<f64> {
    let mut tokens: Vec<usize> = (0..probs.len() - 1).map(|i| 4 + i).collect();
    tokens.push(tokens::EOS);
    CaptionHypothesis {
        tokens,
        token_probs: probs.to_vec(),
        truncated: false,
    }
}

fn count(n: usize) -> CountPrediction<f64> {
    let mut d = vec![0.0; n.max(10) + 1];
    d[n] = 1.0;
    CountPrediction::from_distribution(d)
}

#[test]
fn confidence_examples() {
    let cfg = RankingConfig { gamma: 2.0, mu: 0.3 };
    let c = event_confidence(&det(0.0, 1.0, 0.9, 0), &cap(&[0.5; 4]), &cfg).unwrap();
    let expected = 0.9 + 0.3 / 16.0 * 4.0 * 0.5f64.ln();
    assert!((c - expected).abs() < 1e-12);
    assert!((c - (0.9 - 0.051986)).abs() < 1e-6);
    let zero_mu = RankingConfig { mu: 0.0, ..cfg };
    assert_eq!(event_confidence(&det(0.0, 1.0, 0.37, 0), &cap(&[0.1, 0.2]), &zero_mu).unwrap(), 0.37);

    // Lengths 2 and 8 with equal per-token probability: the formula
    // penalizes the longer caption less.
    let short = event_confidence(&det(0.0, 1.0, 0.5, 0), &cap(&[0.4; 2]), &cfg).unwrap();
    let long = event_confidence(&det(0.0, 1.0, 0.5, 0), &cap(&[0.4; 8]), &cfg).unwrap();
    let direct = |m: f64| 0.5 + 0.3 / m.powi(2) * m * 0.4f64.ln();
    assert!((short - direct(2.0)).abs() < 1e-12 && (long - direct(8.0)).abs() < 1e-12);
    assert!(long > short);

    let empty = CaptionHypothesis::<f64> {
        tokens: vec![],
        token_probs: vec![],
        truncated: false,
    };
    assert!(event_confidence(&det(0.0, 1.0, 0.5, 0), &empty, &cfg).is_err());
    let zero = event_confidence(&det(0.0, 1.0, 0.5, 0), &cap(&[0.0, 1.0]), &cfg).unwrap();
    assert!(zero.is_finite());
}

#[test]
fn confidence_increases_with_localization_confidence() {
    let cfg = RankingConfig::default();
    let c = cap(&[0.3, 0.8, 0.6]);
    let mut last = f64::NEG_INFINITY;
    for i in 0..=20 {
        let v = event_confidence(&det(0.0, 1.0, i as f64 / 20.0, 0), &c, &cfg).unwrap();
        assert!(v > last);
        last = v;
    }
}

#[test]
fn crafted_four_query_selection() {
    let cfg = RankingConfig { gamma: 2.0, mu: 1.0 };
    let dets = [det(0.6, 0.9, 0.9, 0), det(0.1, 0.3, 0.8, 1), det(0.0, 0.2, 0.95, 2), det(0.3, 0.5, 0.7, 3)];
    // Caption terms: ln(.5)/1 = -.693, 2ln(.9)/4 = -.053, ln(.1)/1 = -2.303, 0.
    let caps = [cap(&[0.5]), cap(&[0.9, 0.9]), cap(&[0.1]), cap(&[1.0])];
    // Confidences: 0.207, 0.747, -1.353, 0.7 -> top 3 = {1, 3, 0}.
    let sel = select_events(&dets, &caps, &count(3), &cfg).unwrap();
    assert!(!sel.clamped);
    let order: Vec<usize> = sel.events.iter().map(|e| e.query_index).collect();
    assert_eq!(order, vec![1, 3, 0]);
    let one = select_events(&dets, &caps, &count(1), &cfg).unwrap();
    assert_eq!(one.events[0].query_index, 1);
    let all = select_events(&dets, &caps, &count(4), &cfg).unwrap();
    assert_eq!(all.events.len(), 4);
    let over = select_events(&dets, &caps, &count(9), &cfg).unwrap();
    assert!(over.clamped);
    assert_eq!(over.events.len(), 4);
}

#[test]
fn ties_go_to_the_lower_query_index() {
    let cfg = RankingConfig::default();
    let dets = [det(0.5, 0.6, 0.5, 0), det(0.1, 0.2, 0.5, 1), det(0.3, 0.4, 0.5, 2)];
    let caps = [cap(&[0.5, 0.5]), cap(&[0.5, 0.5]), cap(&[0.5, 0.5])];
    for _ in 0..5 {
        let sel = select_events(&dets, &caps, &count(2), &cfg).unwrap();
        let q: Vec<usize> = sel.events.iter().map(|e| e.query_index).collect();
        assert_eq!(q, vec![1, 0]);
    }
}

#[test]
fn zero_mu_selection_follows_localization_order() {
    let mut r = rng(1);
    let cfg = RankingConfig { gamma: 2.0, mu: 0.0 };
    for _ in 0..100 {
        let n = r.random_range(1..12);
        let dets: Vec<_> = (0..n)
            .map(|i| {
                let a: f64 = r.random_range(0.0..1.0);
                // Coarse confidences produce ties.
                det(a * 0.5, a * 0.5 + 0.1, (r.random_range(0..5) as f64) / 4.0, i)
            })
            .collect();
        let caps: Vec<_> = (0..n).map(|_| cap(&[r.random_range(0.01..1.0), 0.5])).collect();
        let k = r.random_range(1..=n);
        let sel = select_events(&dets, &caps, &count(k), &cfg).unwrap();
        let mut expected: Vec<usize> = (0..n).collect();
        expected.sort_by(|&a, &b| dets[b].loc_confidence.partial_cmp(&dets[a].loc_confidence).unwrap().then(a.cmp(&b)));
        expected.truncate(k);
        let mut got: Vec<usize> = sel.events.iter().map(|e| e.query_index).collect();
        got.sort_unstable();
        expected.sort_unstable();
        assert_eq!(got, expected);
        assert_eq!(sel.events.len(), k.min(n));
        assert!(sel.events.windows(2).all(|w| w[0].segment.start <= w[1].segment.start));
    }
}

#[test]
fn paragraph_mode_contracts() {
    let cfg = ModelConfig {
        temporal_length: 16,
        num_levels: 2,
        d_model: 16,
        ffn_dim: 32,
        heads: 2,
        num_queries: 3,
        input_dim: 5,
        norm_groups: 4,
        caption_head: densecap_core::config::CaptionHeadKind::Dsa,
        ..ModelConfig::default()
    };
    let mut model = DenseCaptioner::<f64>::new(cfg, 2).unwrap();
    let mut r = rng(2);
    randomize(&mut model.params, &mut r, 0.4);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    assert!(model.paragraph_captions(&frames, &[]).is_err());

    let one = model.paragraph_captions(&frames, &[Segment { start: 0.2, end: 0.5 }]).unwrap();
    assert_eq!(one.len(), 1);

    let props: Vec<Segment<f64>> = (0..7)
        .map(|i| Segment {
            start: 0.1 * i as f64,
            end: 0.1 * i as f64 + 0.25,
        })
        .collect();
    for k in 1..=7 {
        assert_eq!(model.paragraph_captions(&frames, &props[..k]).unwrap().len(), k);
    }
    // Within one chunk, permuting proposals permutes captions.
    let base = model.paragraph_captions(&frames, &props[..3]).unwrap();
    let perm = [2, 0, 1];
    let permuted: Vec<_> = perm.iter().map(|&i| props[i]).collect();
    let out = model.paragraph_captions(&frames, &permuted).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(out[j].tokens, base[i].tokens);
    }
    let events = paragraph_events(&permuted, &out).unwrap();
    assert!(events.windows(2).all(|w| w[0].segment.start <= w[1].segment.start));
}
