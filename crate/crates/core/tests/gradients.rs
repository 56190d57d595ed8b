mod common;

use common::{model_grad_error, random_seq, rng, small_config, toy_vocab};
use proptest::prelude::*;
use rand::Rng;
use sarcattn::gradcheck::grad_check;
use sarcattn::train::Batch;
use sarcattn::{Graph, HeadDims, Model, NodeId, Tensor, TensorError};

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

/// Reduces `out` to a scalar through a fixed random weighting so every
/// output element carries a distinct gradient.
fn weigh(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId, TensorError> {
    let w = rand_tensor(g.value(out).shape(), seed ^ 0xabcd);
    let w = g.constant(w);
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

fn check<F>(x: &Tensor, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    grad_check(
        |g, x| {
            let out = f(g, x)?;
            weigh(g, out, seed)
        },
        x,
        EPS,
    )
    .unwrap()
}

macro_rules! ok {
    ($e:expr) => {{
        let err = $e;
        prop_assert!(err < TOL, "error {}", err);
    }};
}

fn extents() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=8, 1usize..=8, 0u64..1 << 40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn elementwise_ops((m, n, seed) in extents()) {
        let x = rand_tensor(&[m, n], seed);
        let other = rand_tensor(&[m, n], seed + 1);
        let row = rand_tensor(&[1, n], seed + 2);
        let factor = rand_tensor(&[m, n], seed + 3).into_data();
        let o = other.clone();
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.add(x, c) }));
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.sub(c, x) }));
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.mul(x, c) }));
        ok!(check(&x, seed, |g, x| g.mul(x, x)));
        ok!(check(&x, seed, |g, x| Ok(g.scale(x, -1.7))));
        ok!(check(&x, seed, |g, x| Ok(g.affine(x, 0.3, 2.0))));
        ok!(check(&x, seed, |g, x| g.mul_const(x, factor.clone())));
        ok!(check(&x, seed, |g, x| Ok(g.sigmoid(x))));
        ok!(check(&x, seed, |g, x| Ok(g.tanh(x))));
        ok!(check(&x, seed, |g, x| Ok(g.sum(x))));
        ok!(check(&x, seed, |g, x| Ok(g.mean(x))));
        ok!(check(&x, seed, |g, x| g.transpose(x)));
        let r = row.clone();
        ok!(check(&x, seed, |g, x| { let c = g.constant(r.clone()); g.add_row(x, c) }));
        let base = other.clone();
        ok!(check(&row, seed, |g, r| { let c = g.constant(base.clone()); g.add_row(c, r) }));
    }

    #[test]
    fn matmul_both_sides((m, k, seed) in extents(), n in 1usize..=8) {
        let a = rand_tensor(&[m, k], seed);
        let b = rand_tensor(&[k, n], seed + 1);
        let bc = b.clone();
        ok!(check(&a, seed, |g, a| { let b = g.constant(bc.clone()); g.matmul(a, b) }));
        let ac = a.clone();
        ok!(check(&b, seed, |g, b| { let a = g.constant(ac.clone()); g.matmul(a, b) }));
    }

    #[test]
    fn softmax_masked_and_plain((m, n, seed) in extents()) {
        let x = rand_tensor(&[m, n], seed).into_data().iter().map(|v| 3.0 * v).collect();
        let x = Tensor::new(vec![m, n], x).unwrap();
        ok!(check(&x, seed, |g, x| g.softmax_rows(x)));
        let mut r = rng(seed + 5);
        let mut keep: Vec<bool> = (0..m * n).map(|_| r.gen_bool(0.6)).collect();
        for i in 0..m {
            keep[i * n + r.gen_range(0..n)] = true;
        }
        ok!(check(&x, seed, |g, x| g.masked_softmax_rows(x, Some(&keep))));
    }

    #[test]
    fn structural_ops((m, n, seed) in extents(), k in 1usize..=8) {
        let x = rand_tensor(&[m, n], seed);
        let other = rand_tensor(&[m, n], seed + 1);
        let mut r = rng(seed + 2);
        let o = other.clone();
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.concat(&[c, x, x], 1) }));
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.concat(&[x, c], 0) }));
        let (c0, c1) = { let a = r.gen_range(0..n); (a, r.gen_range(a + 1..=n)) };
        ok!(check(&x, seed, |g, x| g.slice(x, 1, c0, c1)));
        let (r0, r1) = { let a = r.gen_range(0..m); (a, r.gen_range(a + 1..=m)) };
        ok!(check(&x, seed, |g, x| g.slice(x, 0, r0, r1)));
        let idx: Vec<usize> = (0..k).map(|_| r.gen_range(0..m)).collect();
        ok!(check(&x, seed, |g, x| g.gather_rows(x, &idx)));
        let pick: Vec<bool> = (0..m).map(|_| r.gen_bool(0.5)).collect();
        let o = other.clone();
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.blend_rows(x, c, &pick) }));
        let o = other.clone();
        ok!(check(&x, seed, |g, x| { let c = g.constant(o.clone()); g.blend_rows(c, x, &pick) }));
    }

    #[test]
    fn layer_norm_all_inputs((m, n, seed) in extents()) {
        let n = n.max(2);
        let x = rand_tensor(&[m, n], seed);
        let gain = rand_tensor(&[1, n], seed + 1);
        let bias = rand_tensor(&[1, n], seed + 2);
        let (gc, bc, xc) = (gain.clone(), bias.clone(), x.clone());
        ok!(check(&x, seed, |g, x| {
            let (a, b) = (g.constant(gc.clone()), g.constant(bc.clone()));
            g.layer_norm(x, a, b, 1e-5)
        }));
        ok!(check(&gain, seed, |g, gn| {
            let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
            g.layer_norm(x, gn, b, 1e-5)
        }));
        ok!(check(&bias, seed, |g, bs| {
            let (x, a) = (g.constant(xc.clone()), g.constant(gc.clone()));
            g.layer_norm(x, a, bs, 1e-5)
        }));
    }

    #[test]
    fn attention_blocks(batch in 1usize..=2, seq in 1usize..=4, heads in 1usize..=3, dk in 1usize..=2, seed in 0u64..1 << 40) {
        let dims = HeadDims { batch, seq, heads };
        let q = rand_tensor(&[batch * seq, heads * dk], seed);
        let k = rand_tensor(&[batch * seq, heads * dk], seed + 1);
        let p = rand_tensor(&[batch * heads * seq, seq], seed + 2);
        let kc = k.clone();
        ok!(check(&q, seed, |g, q| { let k = g.constant(kc.clone()); g.attn_scores(q, k, dims, 0.6) }));
        let qc = q.clone();
        ok!(check(&k, seed, |g, k| { let q = g.constant(qc.clone()); g.attn_scores(q, k, dims, 0.6) }));
        let vc = k.clone();
        ok!(check(&p, seed, |g, p| { let v = g.constant(vc.clone()); g.attn_mix(p, v, dims) }));
        let pc = p.clone();
        ok!(check(&k, seed, |g, v| { let p = g.constant(pc.clone()); g.attn_mix(p, v, dims) }));
    }

    #[test]
    fn bce_inside_clamp(m in 1usize..=8, seed in 0u64..1 << 40) {
        let mut r = rng(seed);
        let probs: Vec<f64> = (0..m).map(|_| r.gen_range(0.05..0.95)).collect();
        let labels: Vec<f64> = (0..m).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let x = Tensor::new(vec![m, 1], probs).unwrap();
        let err = grad_check(|g, x| g.bce(x, &labels), &x, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn softmax_rows_are_distributions((m, n, seed) in extents(), spread in 0.1f64..30.0) {
        let data = rand_tensor(&[m, n], seed).into_data().iter().map(|v| v * spread).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![m, n], data).unwrap());
        let s = g.softmax_rows(x).unwrap();
        let s = g.value(s);
        for i in 0..m {
            let row = s.row_slice(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn matmul_associates(seed in 0u64..1 << 40) {
        let a = rand_tensor(&[4, 4], seed);
        let b = rand_tensor(&[4, 4], seed + 1);
        let c = rand_tensor(&[4, 4], seed + 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 5e-12);
    }
}

#[test]
fn shared_subexpression_sums_paths() {
    // y = x·x + 3x with x used three times: dy/dx = 2x + 3.
    let x0 = Tensor::row(&[0.5, -2.0, 4.0]);
    let mut g = Graph::new();
    let x = g.leaf(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let lin = g.scale(x, 3.0);
    let y = g.add(sq, lin).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    for (d, v) in grad.data().iter().zip(x0.data()) {
        assert_eq!(*d, 2.0 * v + 3.0);
    }
}

fn model_check(
    tweak: impl Fn(&mut sarcattn::model::ModelConfig),
    lengths: &[usize],
) -> (f64, String) {
    let vocab = toy_vocab(10);
    let mut cfg = small_config(&vocab);
    tweak(&mut cfg);
    let model = Model::with_random_embeddings(cfg).unwrap();
    let mut r = rng(77);
    let seqs: Vec<_> = lengths
        .iter()
        .map(|&l| random_seq(&vocab, l, &mut r))
        .collect();
    let refs: Vec<_> = seqs.iter().collect();
    let labels: Vec<u8> = (0..seqs.len()).map(|i| (i % 2) as u8).collect();
    let batch = Batch::from_sequences(&refs, &labels).unwrap();
    model_grad_error(&model, &batch, 1e-5)
}

#[test]
fn model_gradients_padded_batch() {
    let (err, at) = model_check(|_| {}, &[5, 2, 3]);
    assert!(err < TOL, "{err} at {at}");
}

#[test]
fn model_gradients_variants() {
    for (name, tweak) in [
        (
            "no residual",
            Box::new(|c: &mut sarcattn::model::ModelConfig| c.no_residual = true)
                as Box<dyn Fn(&mut sarcattn::model::ModelConfig)>,
        ),
        ("full-width scale", Box::new(|c| c.scale_full_dim = true)),
        ("no attention", Box::new(|c| c.num_layers = 0)),
        ("one head", Box::new(|c| c.num_heads = 1)),
    ] {
        let (err, at) = model_check(tweak, &[4, 6]);
        assert!(err < TOL, "{name}: {err} at {at}");
    }
}
