mod common;

use common::{rand_tensor, rng};
use densecap_core::geometry::{giou, Segment};
use densecap_core::heads::EventDetection;
use densecap_core::matching::{caption_match_cost, focal_loss, hungarian, match_cost, MatchCostConfig};
use densecap_core::tensor::Tensor;
use rand::Rng;

/// Minimum over every injection of the smaller side into the larger one;
/// costs are summed in query order.
fn brute_force(cost: &Tensor<f64>) -> (f64, Vec<(usize, usize)>) {
    let (n, g) = cost.shape();
    let transpose = n > g;
    let (small, large) = if transpose { (g, n) } else { (n, g) };
    let mut best = (f64::INFINITY, Vec::new());
    let mut chosen = Vec::with_capacity(small);
    let mut used = vec![false; large];
    fn rec(
        cost: &Tensor<f64>,
        transpose: bool,
        small: usize,
        chosen: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if chosen.len() == small {
            let mut pairs: Vec<(usize, usize)> = chosen
                .iter()
                .enumerate()
                .map(|(s, &l)| if transpose { (l, s) } else { (s, l) })
                .collect();
            pairs.sort_unstable();
            let total: f64 = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
            if total < best.0 {
                *best = (total, pairs);
            }
            return;
        }
        for l in 0..used.len() {
            if !used[l] {
                used[l] = true;
                chosen.push(l);
                rec(cost, transpose, small, chosen, used, best);
                chosen.pop();
                used[l] = false;
            }
        }
    }
    rec(cost, transpose, small, &mut chosen, &mut used, &mut best);
    best
}

#[test]
fn six_by_four_has_360_candidates_and_matches_oracle() {
    let mut r = rng(1);
    for _ in 0..100 {
        let cost: Tensor<f64> = rand_tensor(&mut r, 6, 4, -3.0, 3.0);
        let m = hungarian(&cost).unwrap();
        let (best, pairs) = brute_force(&cost);
        assert_eq!(m.total_cost, best);
        assert_eq!(m.pairs, pairs);
    }
    assert_eq!((3..=6).product::<usize>(), 360);
}

#[test]
fn random_dyadic_instances_match_oracle_exactly() {
    let mut r = rng(2);
    for _ in 0..500 {
        let n = r.random_range(1..=8);
        let g = if n > 6 { r.random_range(1..=6) } else { r.random_range(1..=8) };
        let data = (0..n * g).map(|_| r.random_range(-40i32..40) as f64 / 16.0).collect();
        let cost = Tensor::from_vec(n, g, data);
        let m = hungarian(&cost).unwrap();
        assert_eq!(m.len(), n.min(g));
        let mut q: Vec<_> = m.queries();
        let mut t: Vec<_> = m.targets();
        q.dedup();
        t.sort_unstable();
        t.dedup();
        assert_eq!((q.len(), t.len()), (m.len(), m.len()));
        assert_eq!(m.total_cost, brute_force(&cost).0, "{cost:?}");
    }
}

#[test]
fn positive_scaling_keeps_assignment() {
    let mut r = rng(3);
    for _ in 0..200 {
        let cost: Tensor<f64> = rand_tensor(&mut r, 5, 5, 0.0, 1.0);
        let k = r.random_range(0.01..100.0);
        let scaled = cost.map(|v| v * k);
        assert_eq!(hungarian(&cost).unwrap().pairs, hungarian(&scaled).unwrap().pairs);
    }
}

fn det(start: f64, end: f64, conf: f64, i: usize) -> EventDetection<f64> {
    EventDetection {
        segment: Segment { start, end },
        loc_confidence: conf,
        query_index: i,
    }
}

#[test]
fn perfect_overlap_approaches_negative_giou_weight() {
    let cfg = MatchCostConfig::default();
    let gt = [Segment { start: 0.2, end: 0.6 }];
    let mut last = f64::INFINITY;
    for conf in [0.9, 0.99, 0.999, 1.0 - 1e-9] {
        let c = match_cost(&[det(0.2, 0.6, conf, 0)], &gt, &cfg).get(0, 0);
        assert!(c < last);
        last = c;
    }
    assert!((last + cfg.alpha_giou).abs() < 1e-9);
}

#[test]
fn zero_giou_weight_gives_identical_columns() {
    let cfg = MatchCostConfig {
        alpha_giou: 0.0,
        ..MatchCostConfig::default()
    };
    let preds = [det(0.1, 0.3, 0.7, 0), det(0.4, 0.9, 0.2, 1), det(0.0, 1.0, 0.5, 2)];
    let gts = [Segment { start: 0.0, end: 0.2 }, Segment { start: 0.5, end: 0.6 }];
    let c = match_cost(&preds, &gts, &cfg);
    for i in 0..3 {
        assert_eq!(c.get(i, 0), c.get(i, 1));
    }
}

#[test]
fn two_by_two_hand_computed() {
    let cfg = MatchCostConfig::default();
    let preds = [det(0.1, 0.5, 0.8, 0), det(0.0, 0.2, 0.3, 1)];
    let gts = [Segment { start: 0.3, end: 0.7 }, Segment { start: 0.8, end: 1.0 }];
    let c = match_cost(&preds, &gts, &cfg);
    // giou: p0/g0 inter .2 union .6 -> 1/3; p0/g1 hull .9 union .6 -> -1/3;
    // p1/g0 hull .7 union .6 -> -1/7; p1/g1 hull 1.0 union .4 -> -0.6.
    let f0 = 0.25 * 0.2f64.powi(2) * -(0.8f64.ln());
    let f1 = 0.25 * 0.7f64.powi(2) * -(0.3f64.ln());
    let expected = [[-2.0 / 3.0 + f0, 2.0 / 3.0 + f0], [2.0 / 7.0 + f1, 1.2 + f1]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((c.get(i, j) - expected[i][j]).abs() < 1e-12, "{i},{j}");
        }
    }
    assert!((giou(&preds[1].segment, &gts[0]).unwrap() + 1.0 / 7.0).abs() < 1e-12);
}

#[test]
fn focal_cost_matches_loss_definition() {
    for p in [0.01, 0.3, 0.5, 0.9] {
        let cfg = MatchCostConfig::default();
        let c = match_cost(&[det(0.0, 1.0, p, 0)], &[Segment { start: 0.0, end: 1.0 }], &cfg).get(0, 0);
        assert!((c - (-2.0 + focal_loss(p, true, 0.25, 2.0))).abs() < 1e-12);
    }
}

#[test]
fn caption_cost_examples() {
    let cfg = MatchCostConfig {
        caption_alpha_cls: 0.0,
        caption_gamma: 0.0,
        ..MatchCostConfig::default()
    };
    // Probability one on every token: zero cost.
    let loglik = Tensor::from_vec(1, 2, vec![0.0, 4.0 * 0.5f64.ln()]);
    let c = caption_match_cost(&loglik, &[4, 4], &[0.5], &cfg);
    assert_eq!(c.get(0, 0), 0.0);
    assert!(c.get(0, 1) > 0.0);
    let g1 = caption_match_cost(&loglik, &[4, 4], &[0.5], &MatchCostConfig { caption_gamma: 1.0, ..cfg });
    assert!((g1.get(0, 1) - c.get(0, 1) / 4.0).abs() < 1e-12);
}

#[test]
fn three_by_two_caption_instance_matches_oracle() {
    let cfg = MatchCostConfig::default();
    let loglik = Tensor::from_vec(3, 2, vec![-2.0, -6.0, -1.5, -0.5, -4.0, -3.0]);
    let conf = [0.6, 0.4, 0.9];
    let lengths = [3, 2];
    let c = caption_match_cost(&loglik, &lengths, &conf, &cfg);
    for i in 0..3 {
        for j in 0..2 {
            let expected = -loglik.get(i, j) / (lengths[j] as f64).powi(2) + 0.5 * focal_loss(conf[i], true, 0.25, 2.0);
            assert!((c.get(i, j) - expected).abs() < 1e-12);
        }
    }
    let m = hungarian(&c).unwrap();
    let (best, pairs) = brute_force(&c);
    assert_eq!(m.pairs, pairs);
    assert_eq!(m.total_cost, best);
}
