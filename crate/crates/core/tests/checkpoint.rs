mod common;

use common::{rand_tensor, rng};
use densecap_core::autograd::Graph;
use densecap_core::checkpoint::Checkpoint;
use densecap_core::config::ModelConfig;
use densecap_core::geometry::Segment;
use densecap_core::model::{DenseCaptioner, GroundTruth, Objective};
use densecap_core::optim::{Adam, AdamConfig};
use densecap_core::tensor::Tensor;

fn small() -> ModelConfig {
    ModelConfig {
        temporal_length: 16,
        num_levels: 2,
        d_model: 16,
        ffn_dim: 32,
        heads: 2,
        num_queries: 4,
        input_dim: 5,
        norm_groups: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn tensors_round_trip_bit_exactly() {
    let mut r = rng(1);
    let mut ck = Checkpoint::<f32>::new(serde_json::json!({"note": "x", "step": 3}));
    ck.push("a/b", rand_tensor(&mut r, 3, 4, -1e30, 1e30));
    ck.push("tiny", Tensor::from_vec(1, 3, vec![f32::MIN_POSITIVE, -0.0, 1e-45]));
    ck.push("empty", Tensor::zeros(0, 5));
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = Checkpoint::<f32>::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.tensors.len(), 3);
    for ((n1, t1), (n2, t2)) in ck.tensors.iter().zip(&back.tensors) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }
    assert!(Checkpoint::<f64>::read_from(buf.as_slice()).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(Checkpoint::<f32>::read_from(bad.as_slice()).is_err());
    assert!(Checkpoint::<f32>::read_from(&buf[..buf.len() - 2]).is_err());
}

#[test]
fn model_restores_identically_from_file() {
    let model = DenseCaptioner::<f32>::new(small(), 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.to_checkpoint(serde_json::Map::new()).unwrap().save(&path).unwrap();
    let back = DenseCaptioner::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.config, model.config);
    for ((_, n1, t1), (_, n2, t2)) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1, t2);
    }
    let mut r = rng(2);
    let frames: Tensor<f32> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    assert_eq!(model.predict(&frames).unwrap(), back.predict(&frames).unwrap());
}

fn train_steps(model: &mut DenseCaptioner<f64>, adam: &mut Adam<f64>, frames: &Tensor<f64>, gt: &GroundTruth<f64>, steps: usize) {
    let obj = Objective::default();
    for _ in 0..steps {
        let mut grads = {
            let mut g = Graph::new(&model.params);
            let out = model.network.forward(&mut g, frames).unwrap();
            let loss = model.network.set_loss(&mut g, &out, gt, &obj).unwrap();
            g.backward(loss.loss.total).into_params()
        };
        adam.step(&mut model.params, &mut grads).unwrap();
    }
}

#[test]
fn resumed_optimizer_reproduces_uninterrupted_run() {
    let mut r = rng(3);
    let frames: Tensor<f64> = rand_tensor(&mut r, 16, 5, -1.0, 1.0);
    let gt = GroundTruth {
        segments: vec![Segment { start: 0.2, end: 0.5 }],
        captions: vec![vec![4, 5, 2]],
    };
    let cfg = AdamConfig {
        learning_rate: 1e-3,
        ..AdamConfig::default()
    };
    let mut a = DenseCaptioner::<f64>::new(small(), 1).unwrap();
    let mut adam_a = Adam::new(cfg, &a.params);
    train_steps(&mut a, &mut adam_a, &frames, &gt, 4);

    let mut b = DenseCaptioner::<f64>::new(small(), 1).unwrap();
    let mut adam_b = Adam::new(cfg, &b.params);
    train_steps(&mut b, &mut adam_b, &frames, &gt, 2);
    let mut ck = b.to_checkpoint(serde_json::Map::new()).unwrap();
    adam_b.export(&b.params, &mut ck);
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let ck = Checkpoint::read_from(buf.as_slice()).unwrap();
    let mut c = DenseCaptioner::<f64>::from_checkpoint(&ck).unwrap();
    let mut adam_c = Adam::import(cfg, adam_b.step, &c.params, &ck).unwrap();
    train_steps(&mut c, &mut adam_c, &frames, &gt, 2);

    for ((_, _, t1), (_, _, t2)) in a.params.iter().zip(c.params.iter()) {
        assert_eq!(t1, t2);
    }
}
