mod common;

use std::sync::Arc;

use common::{rand_tensor, randomize, rng, tiny_config};
use densecap_core::attention::{DeformableAttention, Reference};
use densecap_core::autograd::{Graph, LevelLayout};
use densecap_core::config::{CaptionHeadKind, ModelConfig};
use densecap_core::features::PyramidBuilder;
use densecap_core::geometry::Segment;
use densecap_core::gradcheck::{check_inputs, check_params};
use densecap_core::model::{DenseCaptioner, GroundTruth, Objective};
use densecap_core::params::ParamStore;
use densecap_core::tensor::Tensor;
use densecap_core::transformer::Encoder;
use rand::Rng;

#[test]
fn constant_pyramid_output_ignores_offsets_and_weights() {
    let mut r = rng(1);
    let layout = Arc::new(LevelLayout::new(vec![8, 4, 2]));
    for trial in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let att = DeformableAttention::new(&mut store, "att", 8, 2, 3, 3, &mut r);
        randomize(&mut store, &mut r, 2.0);
        let v: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut memory = Tensor::zeros(layout.total(), 8);
        for i in 0..layout.total() {
            memory.row_mut(i).copy_from_slice(&v);
        }
        let mut g = Graph::inference(&store);
        let mem = g.constant(memory);
        let q = g.constant(rand_tensor(&mut r, 5, 8, -3.0, 3.0));
        let refs = g.constant(rand_tensor(&mut r, 5, 1, 0.0, 1.0));
        let out = att.forward(&mut g, q, Reference::Point(refs), mem, &layout);
        let vrow = g.constant(Tensor::row_vector(v.clone()));
        let vp = att.value_proj.forward(&mut g, vrow);
        let expected = att.out_proj.forward(&mut g, vp);
        let expected = g.value(expected).clone();
        let out = g.value(out.output);
        for i in 0..5 {
            for j in 0..8 {
                assert!((out.get(i, j) - expected.get(0, j)).abs() < 1e-10, "trial {trial}");
            }
        }
    }
}

#[test]
fn attention_weights_normalized_per_head() {
    let mut r = rng(2);
    let layout = Arc::new(LevelLayout::new(vec![16, 8]));
    let mut store = ParamStore::<f32>::new();
    let att = DeformableAttention::new(&mut store, "att", 16, 4, 2, 4, &mut r);
    randomize(&mut store, &mut r, 3.0);
    let mut g = Graph::inference(&store);
    let mem = g.constant(rand_tensor(&mut r, 24, 16, -1.0, 1.0));
    let q = g.constant(rand_tensor(&mut r, 7, 16, -2.0, 2.0));
    let refs = g.constant(rand_tensor(&mut r, 7, 1, 0.0, 1.0));
    let out = att.forward(&mut g, q, Reference::Point(refs), mem, &layout);
    let w = g.value(out.weights);
    let per_head = 2 * 4;
    for i in 0..7 {
        for h in 0..4 {
            let s: f32 = w.row(i)[h * per_head..(h + 1) * per_head].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

fn identity(store: &mut ParamStore<f64>, lin: &densecap_core::nn::Linear) {
    let w = store.get_mut(lin.weight);
    for i in 0..lin.in_dim {
        for j in 0..lin.out_dim {
            w.set(i, j, if i == j { 1.0 } else { 0.0 });
        }
    }
    store.get_mut(lin.bias).data_mut().fill(0.0);
}

#[test]
fn single_point_single_level_reads_interpolated_feature() {
    let mut r = rng(3);
    let len = 9;
    let layout = Arc::new(LevelLayout::new(vec![len]));
    let mut store = ParamStore::<f64>::new();
    let att = DeformableAttention::new(&mut store, "att", 4, 1, 1, 1, &mut r);
    store.get_mut(att.offsets.weight).data_mut().fill(0.0);
    store.get_mut(att.offsets.bias).data_mut().fill(0.0);
    identity(&mut store, &att.value_proj);
    identity(&mut store, &att.out_proj);
    let memory: Tensor<f64> = rand_tensor(&mut r, len, 4, -1.0, 1.0);
    for &p in &[0.0, 0.13, 0.5, 0.77, 1.0] {
        let mut g = Graph::inference(&store);
        let mem = g.constant(memory.clone());
        let q = g.constant(rand_tensor(&mut r, 1, 4, -1.0, 1.0));
        let refs = g.constant(Tensor::scalar(p));
        let out = att.forward(&mut g, q, Reference::Point(refs), mem, &layout);
        // Independent interpolation at p * (T - 1).
        let x = p * (len - 1) as f64;
        let i0 = (x.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        let w1 = x - i0 as f64;
        for c in 0..4 {
            let expected = memory.get(i0, c) * (1.0 - w1) + memory.get(i1, c) * w1;
            assert!((g.value(out.output).get(0, c) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn output_gradient_wrt_query_matches_finite_differences() {
    let mut r = rng(4);
    let layout = Arc::new(LevelLayout::new(vec![8, 4]));
    let mut store = ParamStore::<f64>::new();
    let att = DeformableAttention::new(&mut store, "att", 8, 2, 2, 2, &mut r);
    randomize(&mut store, &mut r, 0.5);
    let memory: Tensor<f64> = rand_tensor(&mut r, 12, 8, -1.0, 1.0);
    let query: Tensor<f64> = rand_tensor(&mut r, 3, 8, -1.0, 1.0);
    let refs: Tensor<f64> = rand_tensor(&mut r, 3, 1, 0.1, 0.9);
    let report = check_inputs(&store, &[query], 1e-4, 1e-6, |g, v| {
        let mem = g.constant(memory.clone());
        let refs = g.constant(refs.clone());
        let out = att.forward(g, v[0], Reference::Point(refs), mem, &layout);
        let w = g.constant(Tensor::from_vec(3, 8, (0..24).map(|i| (i as f64 * 0.37).cos()).collect()));
        let p = g.mul(out.output, w);
        g.sum(p)
    });
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn every_attention_parameter_passes_gradient_check() {
    let mut r = rng(5);
    let layout = Arc::new(LevelLayout::new(vec![8, 4]));
    let mut store = ParamStore::<f64>::new();
    let att = DeformableAttention::new(&mut store, "att", 8, 2, 2, 2, &mut r);
    randomize(&mut store, &mut r, 0.5);
    let memory: Tensor<f64> = rand_tensor(&mut r, 12, 8, -1.0, 1.0);
    let query: Tensor<f64> = rand_tensor(&mut r, 3, 8, -1.0, 1.0);
    let refs: Tensor<f64> = rand_tensor(&mut r, 3, 1, 0.1, 0.9);
    let report = check_params(&store, 1e-6, 1e-6, |g| {
        let mem = g.constant(memory.clone());
        let q = g.constant(query.clone());
        let refs = g.constant(refs.clone());
        let out = att.forward(g, q, Reference::Point(refs), mem, &layout);
        let sq = g.mul(out.output, out.output);
        g.sum(sq)
    });
    assert_eq!(report.checked, store.numel());
    assert!(report.passes(1e-3), "{report:?}");
}

fn small_config() -> ModelConfig {
    ModelConfig {
        temporal_length: 16,
        num_levels: 3,
        d_model: 16,
        ffn_dim: 32,
        heads: 2,
        enc_layers: 2,
        dec_layers: 3,
        num_queries: 10,
        input_dim: 5,
        norm_groups: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_preserves_shapes_and_is_deterministic() {
    let cfg = small_config();
    let mut r = rng(6);
    let mut store = ParamStore::<f64>::new();
    let builder = PyramidBuilder::new(&mut store, &cfg, &mut r);
    let encoder = Encoder::new(&mut store, &cfg, &mut r);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let run = || {
        let mut g = Graph::inference(&store);
        let x = g.constant(frames.clone());
        let p = builder.build(&mut g, x).unwrap();
        let e = encoder.encode(&mut g, &p);
        (g.value(p.features).clone(), g.value(e.features).clone(), e.layout.lengths().to_vec())
    };
    let (input, a, lengths) = run();
    let (_, b, _) = run();
    assert_eq!(input.shape(), a.shape());
    assert_eq!(lengths, vec![16, 8, 4]);
    assert_eq!(a, b);
}

#[test]
fn encoder_with_zeroed_residual_branches_is_identity() {
    let cfg = small_config();
    let mut r = rng(7);
    let mut store = ParamStore::<f64>::new();
    let builder = PyramidBuilder::new(&mut store, &cfg, &mut r);
    let encoder = Encoder::new(&mut store, &cfg, &mut r);
    for layer in &encoder.layers {
        for lin in [&layer.attn.out_proj, &layer.ffn.project] {
            store.get_mut(lin.weight).data_mut().fill(0.0);
            store.get_mut(lin.bias).data_mut().fill(0.0);
        }
    }
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let mut g = Graph::inference(&store);
    let x = g.constant(frames);
    let p = builder.build(&mut g, x).unwrap();
    let e = encoder.encode(&mut g, &p);
    assert_eq!(g.value(p.features), g.value(e.features));
}

#[test]
fn decoder_emits_every_query_with_references_in_unit_interval() {
    let cfg = small_config();
    let mut model = DenseCaptioner::<f64>::new(cfg.clone(), 8).unwrap();
    let mut r = rng(8);
    // Large box offsets push references hard against both ends.
    let bbox = model.network.localization.bbox.last().clone();
    for v in model.params.get_mut(bbox.weight).data_mut() {
        *v = r.random_range(-50.0..50.0);
    }
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let mut g = Graph::inference(&model.params);
    let out = model.network.forward(&mut g, &frames).unwrap();
    assert_eq!(out.layers.len(), 3);
    for layer in &out.layers {
        assert_eq!(g.shape(layer.queries), (10, 16));
        for v in [layer.reference.center(), layer.localization.center] {
            assert!(g.value(v).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        for d in layer.localization.detections(&g) {
            assert!(d.segment.validate().is_ok());
            assert!((0.0..=1.0).contains(&d.loc_confidence));
        }
    }
}

#[test]
fn zero_offsets_keep_references_fixed() {
    let model = DenseCaptioner::<f64>::new(small_config(), 9).unwrap();
    let mut r = rng(9);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let mut g = Graph::inference(&model.params);
    let out = model.network.forward(&mut g, &frames).unwrap();
    let first = g.value(out.layers[0].reference.center()).clone();
    for layer in &out.layers {
        let refs = g.value(layer.reference.center());
        for (a, b) in refs.data().iter().zip(first.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fixed_refinement_never_moves_references() {
    let cfg = small_config();
    let mut model = DenseCaptioner::<f64>::new(cfg, 10).unwrap();
    let mut r = rng(10);
    randomize(&mut model.params, &mut r, 0.3);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let mut g = Graph::inference(&model.params);
    let memory = model.network.encode(&mut g, &frames).unwrap();
    let proposals = [Segment { start: 0.1, end: 0.4 }, Segment { start: 0.5, end: 0.7 }];
    let layers = model.network.decode_proposals(&mut g, &memory, &proposals).unwrap();
    for layer in layers {
        let c = g.value(layer.reference.center());
        assert!((c.get(0, 0) - 0.25).abs() < 1e-12 && (c.get(1, 0) - 0.6).abs() < 1e-12);
    }
}

fn end_to_end_check(head: CaptionHeadKind, weak: bool, seed: u64) {
    let cfg = tiny_config(head, weak);
    let mut model = DenseCaptioner::<f64>::new(cfg, seed).unwrap();
    let mut r = rng(seed);
    randomize(&mut model.params, &mut r, 0.5);
    let frames: Tensor<f64> = rand_tensor(&mut r, 8, 6, -1.0, 1.0);
    let gt = GroundTruth {
        segments: vec![Segment { start: 0.1, end: 0.45 }, Segment { start: 0.5, end: 0.9 }],
        captions: vec![vec![4, 5, 6, 2], vec![7, 8, 2]],
    };
    let obj = Objective::default();
    let network = model.network.clone();
    let report = check_params(&model.params, 1e-6, 1e-6, |g| {
        let out = network.forward(g, &frames).unwrap();
        network.set_loss(g, &out, &gt, &obj).unwrap().loss.total
    });
    assert!(report.checked > 500);
    assert!(report.passes(1e-3), "{head:?} weak={weak}: {report:?}");
}

#[test]
fn end_to_end_gradient_check_light_head() {
    end_to_end_check(CaptionHeadKind::Light, false, 11);
}

#[test]
fn end_to_end_gradient_check_dsa_head() {
    end_to_end_check(CaptionHeadKind::Dsa, false, 12);
}

#[test]
fn end_to_end_gradient_check_weak_supervision() {
    end_to_end_check(CaptionHeadKind::Dsa, true, 13);
}
