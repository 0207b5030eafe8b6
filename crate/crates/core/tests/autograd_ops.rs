use std::sync::Arc;

use densecap_core::autograd::{Graph, LevelLayout, Var};
use densecap_core::geometry::Segment;
use densecap_core::gradcheck::check_inputs;
use densecap_core::params::ParamStore;
use densecap_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Reduces `out` to a scalar with fixed pseudo-random weights so every
/// output entry carries a distinct gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, out: Var) -> Var {
    let (r, c) = g.shape(out);
    let w = Tensor::from_vec(r, c, (0..r * c).map(|i| ((i as f64) * 0.731 + 0.2).sin()).collect());
    let w = g.constant(w);
    let p = g.mul(out, w);
    g.sum(p)
}

fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
    let store = ParamStore::new();
    let report = check_inputs(&store, &inputs, STEP, FLOOR, |g, v| {
        let out = f(g, v);
        weighted_sum(g, out)
    });
    assert!(report.passes(TOL), "{report:?}");
    assert!(report.checked > 0);
}

#[test]
fn dense_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    check(vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]));
    check(vec![a.clone()], |g, v| g.transpose(v[0]));
    let c = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    check(vec![a.clone(), c.clone()], |g, v| g.add(v[0], v[1]));
    check(vec![a.clone(), c.clone()], |g, v| g.sub(v[0], v[1]));
    check(vec![a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]));
    check(vec![a.clone(), c.clone()], |g, v| g.minimum(v[0], v[1]));
    check(vec![a.clone(), c], |g, v| g.maximum(v[0], v[1]));
    let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    check(vec![a.clone(), row], |g, v| g.add_row(v[0], v[1]));
    let col = rand_tensor(&mut rng, 3, 1, -1.0, 1.0);
    check(vec![a.clone(), col.clone()], |g, v| g.add_col(v[0], v[1]));
    check(vec![a.clone(), col], |g, v| g.mul_col(v[0], v[1]));
    check(vec![a.clone()], |g, v| g.scale(v[0], -2.5));
    check(vec![a.clone()], |g, v| g.scale_cols(v[0], Arc::new(vec![1.0, -2.0, 0.5, 3.0])));
    check(vec![a.clone()], |g, v| g.sum_cols(v[0]));
    check(vec![a.clone()], |g, v| g.max_rows(v[0]));
}

#[test]
fn elementwise_nonlinearities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, 3, 5, -2.0, 2.0);
    check(vec![a.clone()], |g, v| g.sigmoid(v[0]));
    check(vec![a.clone()], |g, v| g.tanh(v[0]));
    check(vec![a.clone()], |g, v| g.relu(v[0]));
    check(vec![a.clone()], |g, v| g.exp(v[0]));
    let pos = rand_tensor(&mut rng, 3, 5, 0.1, 3.0);
    check(vec![pos], |g, v| g.log(v[0], 1e-8));
    let unit = rand_tensor(&mut rng, 3, 5, 0.05, 0.95);
    check(vec![unit], |g, v| g.inverse_sigmoid(v[0], 1e-5));
    check(vec![a], |g, v| g.clamp(v[0], -0.5, 0.7));
}

#[test]
fn normalizations_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, 4, 6, -2.0, 2.0);
    let gamma = rand_tensor(&mut rng, 1, 6, 0.5, 1.5);
    let beta = rand_tensor(&mut rng, 1, 6, -0.5, 0.5);
    check(vec![x.clone(), gamma.clone(), beta.clone()], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    check(vec![x.clone(), gamma, beta], |g, v| g.group_norm(v[0], v[1], v[2], 3, 1e-5));
    check(vec![x.clone()], |g, v| g.softmax_groups(v[0], 3));
    check(vec![x.clone()], |g, v| g.log_softmax_rows(v[0]));
    check(vec![x], |g, v| {
        let ls = g.log_softmax_rows(v[0]);
        g.pick_cols(ls, vec![0, 5, 2, 3])
    });
}

#[test]
fn structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, 3, 2, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    check(vec![a.clone(), b.clone()], |g, v| g.concat_cols(&[v[0], v[1], v[0]]));
    let c = rand_tensor(&mut rng, 2, 2, -1.0, 1.0);
    check(vec![a.clone(), c], |g, v| g.concat_rows(&[v[0], v[1]]));
    check(vec![b.clone()], |g, v| g.slice_rows(v[0], 1, 2));
    check(vec![b.clone()], |g, v| g.slice_cols(v[0], 1, 2));
    check(vec![b.clone()], |g, v| g.gather_rows(v[0], vec![2, 0, 2, 1]));
    let seq = rand_tensor(&mut rng, 7, 3, -1.0, 1.0);
    check(vec![seq], |g, v| g.unfold1d(v[0], 3, 2, 1));
}

#[test]
fn sampling_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = Arc::new(LevelLayout::new(vec![6, 3, 2]));
    let (heads, points, d) = (2, 2, 4);
    let n = heads * 3 * points;
    let value = rand_tensor(&mut rng, layout.total(), d, -1.0, 1.0);
    let pos = rand_tensor(&mut rng, 3, n, 0.02, 0.98);
    let w = rand_tensor(&mut rng, 3, n, 0.0, 1.0);
    let l = layout.clone();
    check(vec![value.clone(), pos, w], move |g, v| {
        g.deform_sample(v[0], v[1], v[2], l.clone(), heads, points)
    });

    let pos = rand_tensor(&mut rng, 2, 3 * points, 0.02, 0.98);
    let l = layout.clone();
    check(vec![value, pos], move |g, v| g.gather_samples(v[0], v[1], l.clone(), points));

    let blocks = rand_tensor(&mut rng, 2, 12, -1.0, 1.0);
    let q = rand_tensor(&mut rng, 2, 4, -1.0, 1.0);
    check(vec![blocks.clone(), q], |g, v| g.block_dot(v[0], v[1]));
    let w = rand_tensor(&mut rng, 2, 3, -1.0, 1.0);
    check(vec![w, blocks], |g, v| g.block_weighted_sum(v[0], v[1]));
}

#[test]
fn loss_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = rand_tensor(&mut rng, 5, 1, -3.0, 3.0);
    check(vec![logits], |g, v| g.sigmoid_focal(v[0], vec![true, false, true, false, false], 0.25, 2.0));

    let starts = Tensor::column(vec![0.1, 0.5, 0.05]);
    let ends = Tensor::column(vec![0.4, 0.9, 0.2]);
    let targets = vec![
        Segment { start: 0.2, end: 0.6 },
        Segment { start: 0.0, end: 0.3 },
        Segment { start: 0.6, end: 0.8 },
    ];
    check(vec![starts, ends], move |g, v| g.giou(v[0], v[1], targets.clone()));
}

#[test]
fn detach_and_inference_block_gradients() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::scalar(2.0));
    let d = g.detach(x);
    let y = g.mul(x, d);
    let back = g.backward(y);
    // d/dx (x * stop(x)) = stop(x)
    assert_eq!(back.wrt(x).unwrap().item(), 2.0);

    let mut g = Graph::inference(&store);
    let x = g.input(Tensor::scalar(2.0));
    let y = g.mul(x, x);
    assert!(g.backward(y).wrt(x).is_none());
}

#[test]
fn params_are_shared_nodes() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::scalar(3.0));
    let mut g = Graph::new(&store);
    let a = g.param(id);
    let b = g.param(id);
    assert_eq!(a, b);
    let y = g.mul(a, b);
    let back = g.backward(y);
    assert_eq!(back.param(id).item(), 6.0);
}
