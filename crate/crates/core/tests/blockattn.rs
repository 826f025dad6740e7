use mambatron::blockattn::{
    block_attention, block_layer, block_layer_parallel, block_partition, blocked_attention_forward,
    blocked_attention_op, BlockAttnLayer, BlockAttnParams, BlockConfig,
};
use mambatron::numerics::{check_graph_fn, Graph, ParamStore, Tensor, DEFAULT_FD_EPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

fn rand_params(c: usize, seed: u64) -> BlockAttnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = BlockAttnParams::init(c, &mut rng);
    p.ln1_g = Tensor::uniform(&[c], 0.5, &mut rng).map(|v| v + 1.0);
    p.lnc_b = Tensor::uniform(&[c], 0.5, &mut rng);
    p.b_o = Tensor::uniform(&[c], 0.5, &mut rng);
    p.b1 = Tensor::uniform(&[4 * c], 0.5, &mut rng);
    p
}

fn ln_row(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
        .collect()
}

fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let n = w.cols();
    (0..n).map(|j| x.iter().enumerate().map(|(i, v)| v * w.at(i, j)).sum()).collect()
}

/// Straight-line evaluation of the layer treating the whole input as one block.
fn oracle_single_block(seq: &Tensor, ctx: &Tensor, p: &BlockAttnParams, heads: usize) -> Tensor {
    let (l, c) = (seq.rows(), seq.cols());
    let dh = c / heads;
    let xn: Vec<Vec<f64>> = (0..l).map(|i| ln_row(seq.row(i), p.ln1_g.data(), p.ln1_b.data())).collect();
    let cn: Vec<Vec<f64>> = (0..l).map(|i| ln_row(ctx.row(i), p.lnc_g.data(), p.lnc_b.data())).collect();
    let q: Vec<_> = xn.iter().map(|r| vecmat(r, &p.w_q)).collect();
    let mut keys: Vec<_> = xn.iter().map(|r| vecmat(r, &p.w_k)).collect();
    keys.extend(cn.iter().map(|r| vecmat(r, &p.w_kc)));
    let mut vals: Vec<_> = xn.iter().map(|r| vecmat(r, &p.w_v)).collect();
    vals.extend(cn.iter().map(|r| vecmat(r, &p.w_vc)));
    let mut out = Tensor::zeros(&[l, c]);
    for i in 0..l {
        let mut att = vec![0.0; c];
        for h in 0..heads {
            let s: Vec<f64> = keys
                .iter()
                .map(|k| (h * dh..(h + 1) * dh).map(|d| q[i][d] * k[d]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, ej) in e.iter().enumerate() {
                for d in h * dh..(h + 1) * dh {
                    att[d] += ej / z * vals[j][d];
                }
            }
        }
        let o = vecmat(&att, &p.w_o);
        let hrow: Vec<f64> = (0..c).map(|d| seq.at(i, d) + o[d] + p.b_o.data()[d]).collect();
        let hn = ln_row(&hrow, p.ln2_g.data(), p.ln2_b.data());
        let f1: Vec<f64> = vecmat(&hn, &p.w1)
            .iter()
            .zip(p.b1.data())
            .map(|(v, b)| {
                let z = v + b;
                z / (1.0 + (-z).exp())
            })
            .collect();
        let f2 = vecmat(&f1, &p.w2);
        for d in 0..c {
            out.row_mut(i)[d] = hrow[d] + f2[d] + p.b2.data()[d];
        }
    }
    out
}

#[test]
fn window_covering_sequence_is_full_attention() {
    let (l, c) = (6, 8);
    let p = rand_params(c, 1);
    let (seq, ctx) = (rand_t(&[l, c], 2), rand_t(&[l, c], 3));
    let cfg = BlockConfig { w_blk: 8, heads: 2, c };
    let y = block_layer(&seq, &ctx, &cfg, &p).unwrap();
    let o = oracle_single_block(&seq, &ctx, &p, 2);
    assert!(y.max_abs_diff(&o) <= 1e-12);
}

#[test]
fn blocks_match_per_block_oracle() {
    let (l, c, w) = (11, 8, 4);
    let p = rand_params(c, 4);
    let (seq, ctx) = (rand_t(&[l, c], 5), rand_t(&[l, c], 6));
    let cfg = BlockConfig { w_blk: w, heads: 4, c };
    let y = block_layer(&seq, &ctx, &cfg, &p).unwrap();
    assert_eq!(y.shape(), &[l, c]);
    for s in (0..l).step_by(w) {
        let m = w.min(l - s);
        let o = oracle_single_block(&seq.slice_rows(s, m), &ctx.slice_rows(s, m), &p, 4);
        assert!(y.slice_rows(s, m).max_abs_diff(&o) <= 1e-12);
    }
}

#[test]
fn zero_context_projections_reduce_to_self_attention() {
    let c = 8;
    let mut p = rand_params(c, 7);
    p.w_vc = Tensor::zeros(&[c, c]);
    p.w_kc = Tensor::zeros(&[c, c]);
    let (seq, ctx, other) = (rand_t(&[4, c], 8), rand_t(&[4, c], 9), rand_t(&[4, c], 10));
    let cfg = BlockConfig { w_blk: 4, heads: 2, c };
    // context keys score zero and carry zero value: the contexts no longer matter
    let a = block_layer(&seq, &ctx, &cfg, &p).unwrap();
    let b = block_layer(&seq, &other, &cfg, &p).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-13);
    assert!(a.max_abs_diff(&oracle_single_block(&seq, &ctx, &p, 2)) <= 1e-12);
}

#[test]
fn equal_keys_average_the_values() {
    // w_blk = 1, one head: two keys. Make token and context identical and share
    // projections, so both keys and both values coincide.
    let c = 4;
    let mut p = rand_params(c, 11);
    p.lnc_g = p.ln1_g.clone();
    p.lnc_b = p.ln1_b.clone();
    p.w_kc = p.w_k.clone();
    p.w_vc = p.w_v.clone();
    let seq = rand_t(&[1, c], 12);
    let cfg = BlockConfig { w_blk: 1, heads: 1, c };
    let y = block_layer(&seq, &seq, &cfg, &p).unwrap();
    let xn = ln_row(seq.row(0), p.ln1_g.data(), p.ln1_b.data());
    let v = vecmat(&xn, &p.w_v);
    let (q, k) = (vecmat(&xn, &p.w_q), vecmat(&xn, &p.w_k));
    let kc = vecmat(&ln_row(seq.row(0), p.lnc_g.data(), p.lnc_b.data()), &p.w_kc);
    assert_eq!(k, kc);
    let (_, probs) = blocked_attention_forward(
        &Tensor::new(vec![1, c], q).unwrap(),
        &Tensor::new(vec![1, c], k.clone()).unwrap(),
        &Tensor::new(vec![1, c], v.clone()).unwrap(),
        &Tensor::new(vec![1, c], k).unwrap(),
        &Tensor::new(vec![1, c], v.clone()).unwrap(),
        1,
        1,
    );
    assert_eq!(probs, vec![0.5, 0.5]);
    let o = vecmat(&v, &p.w_o);
    let h: Vec<f64> = (0..c).map(|d| seq.at(0, d) + o[d] + p.b_o.data()[d]).collect();
    let hn = ln_row(&h, p.ln2_g.data(), p.ln2_b.data());
    let f1: Vec<f64> = vecmat(&hn, &p.w1)
        .iter()
        .zip(p.b1.data())
        .map(|(a, b)| (a + b) / (1.0 + (-(a + b)).exp()))
        .collect();
    let f2 = vecmat(&f1, &p.w2);
    for d in 0..c {
        assert!((y.at(0, d) - (h[d] + f2[d] + p.b2.data()[d])).abs() <= 1e-12);
    }
}

#[test]
fn perturbing_one_block_leaves_others_bitwise_equal() {
    let (l, c, w) = (16, 8, 4);
    let p = rand_params(c, 13);
    let (seq, ctx) = (rand_t(&[l, c], 14), rand_t(&[l, c], 15));
    let cfg = BlockConfig { w_blk: w, heads: 4, c };
    let base = block_layer(&seq, &ctx, &cfg, &p).unwrap();
    for j in 0..4 {
        let mut s2 = seq.clone();
        for r in j * w..(j + 1) * w {
            s2.row_mut(r).iter_mut().for_each(|v| *v += 0.37);
        }
        let y = block_layer(&s2, &ctx, &cfg, &p).unwrap();
        for i in 0..4 {
            let same = y.slice_rows(i * w, w).data() == base.slice_rows(i * w, w).data();
            assert_eq!(same, i != j, "block {i} after perturbing {j}");
        }
    }
}

#[test]
fn padded_rows_do_not_influence_output() {
    let c = 8;
    let p = rand_params(c, 16);
    let (seq, ctx) = (rand_t(&[5, c], 17), rand_t(&[5, c], 18));
    let cfg = BlockConfig { w_blk: 4, heads: 2, c };
    let blocks = block_partition(&seq, &ctx, &cfg).unwrap();
    let tail = &blocks[1];
    let clean = block_attention(tail, &cfg, &p).unwrap();
    let mut dirty = tail.clone();
    for r in 1..4 {
        dirty.tokens.row_mut(r).iter_mut().for_each(|v| *v = 100.0);
        dirty.contexts.row_mut(r).iter_mut().for_each(|v| *v = -50.0);
    }
    let out = block_attention(&dirty, &cfg, &p).unwrap();
    assert_eq!(out.data(), clean.data());
    assert!(out.data()[c..].iter().all(|&v| v == 0.0));
}

#[test]
fn parallel_equals_sequential_exactly() {
    let (l, c) = (37, 8);
    let p = rand_params(c, 19);
    let (seq, ctx) = (rand_t(&[l, c], 20), rand_t(&[l, c], 21));
    for w in [1, 3, 4, 16, 64] {
        let cfg = BlockConfig { w_blk: w, heads: 2, c };
        let a = block_layer(&seq, &ctx, &cfg, &p).unwrap();
        let b = block_layer_parallel(&seq, &ctx, &cfg, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn tape_layer_equals_block_loop() {
    let (l, c) = (10, 8);
    let mut store = ParamStore::new();
    let layer = BlockAttnLayer::register(&mut store, "bt", rand_params(c, 22));
    let (seq, ctx) = (rand_t(&[l, c], 23), rand_t(&[l, c], 24));
    let cfg = BlockConfig { w_blk: 4, heads: 4, c };
    let mut g = Graph::new();
    let (s, cv) = (g.constant(seq.clone()), g.constant(ctx.clone()));
    let y = layer.forward(&mut g, &store, s, cv, &cfg).unwrap();
    let direct = block_layer(&seq, &ctx, &cfg, &layer.snapshot(&store)).unwrap();
    assert!(g.value(y).max_abs_diff(&direct) <= 1e-12);
}

#[test]
fn attention_gradients_match_finite_differences() {
    let (l, c) = (7, 4);
    let inputs: Vec<Tensor> = (0..6).map(|s| rand_t(&[l, c], 30 + s)).collect();
    let err = check_graph_fn(
        &inputs,
        |g, v| {
            let a = blocked_attention_op(g, v[0], v[1], v[2], v[3], v[4], 3, 2)?;
            let m = g.mul(a, v[5])?;
            Ok(g.sum(m))
        },
        DEFAULT_FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn layer_input_gradients_match_finite_differences() {
    let (l, c) = (6, 4);
    let mut store = ParamStore::new();
    let layer = BlockAttnLayer::register(&mut store, "bt", rand_params(c, 41));
    let inputs = vec![rand_t(&[l, c], 46), rand_t(&[l, c], 47), rand_t(&[l, c], 48)];
    let err = check_graph_fn(
        &inputs,
        |g, v| {
            let cfg = BlockConfig { w_blk: 4, heads: 2, c };
            let y = layer.forward(g, &store, v[0], v[1], &cfg)?;
            let m = g.mul(y, v[2])?;
            Ok(g.sum(m))
        },
        DEFAULT_FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn layer_parameter_gradients_match_finite_differences() {
    let (l, c) = (6, 4);
    let cfg = BlockConfig { w_blk: 4, heads: 2, c };
    let mut store = ParamStore::new();
    let layer = BlockAttnLayer::register(&mut store, "bt", rand_params(c, 42));
    let (seq, ctx, w) = (rand_t(&[l, c], 43), rand_t(&[l, c], 44), rand_t(&[l, c], 45));
    let loss_and_grad = |store: &ParamStore, want_grad: bool| {
        let mut g = Graph::new();
        let (s, cv, wv) = (g.constant(seq.clone()), g.constant(ctx.clone()), g.constant(w.clone()));
        let y = layer.forward(&mut g, store, s, cv, &cfg).unwrap();
        let m = g.mul(y, wv).unwrap();
        let loss = g.sum(m);
        let v = g.value(loss).item();
        let grad = want_grad.then(|| g.backward(loss).unwrap().flatten_params(store));
        (v, grad)
    };
    let analytic = loss_and_grad(&store, true).1.unwrap();
    let flat = store.flatten();
    let err = mambatron::numerics::finite_diff_check(
        |x| {
            let mut s = store.clone();
            s.unflatten(x);
            loss_and_grad(&s, false).0
        },
        &flat,
        &analytic,
        DEFAULT_FD_EPS,
        None,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn mac_count_scales_with_window() {
    let c = 8;
    let macs = |l: usize, w: usize| {
        let mut g = Graph::inference();
        let vars: Vec<_> = (0..5).map(|s| g.constant(rand_t(&[l, c], s))).collect();
        blocked_attention_op(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4], w, 2).unwrap();
        g.macs() as f64
    };
    // doubling L doubles cost; doubling w doubles cost
    let base = macs(256, 4);
    assert!((macs(512, 4) / base - 2.0).abs() < 1e-9);
    assert!((macs(256, 8) / base - 2.0).abs() < 1e-9);
    assert!((macs(256, 16) / base - 4.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..10_000, l in 1usize..30, w in 1usize..9) {
        let c = 4;
        let t: Vec<Tensor> = (0..5).map(|s| rand_t(&[l, c], seed * 7 + s)).collect();
        let (_, probs) = blocked_attention_forward(&t[0], &t[1], &t[2], &t[3], &t[4], w, 2);
        for i in 0..l {
            let m = w.min(l - (i / w) * w);
            for h in 0..2 {
                let off = (i * 2 + h) * 2 * w;
                let row = &probs[off..off + 2 * w];
                prop_assert!((row[..2 * m].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(row[2 * m..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn length_is_preserved(seed in 0u64..10_000, l in 1usize..40, w in 1usize..12) {
        let c = 4;
        let p = rand_params(c, seed);
        let cfg = BlockConfig { w_blk: w, heads: 2, c };
        let y = block_layer(&rand_t(&[l, c], seed + 1), &rand_t(&[l, c], seed + 2), &cfg, &p).unwrap();
        prop_assert_eq!(y.shape(), &[l, c]);
        let blocks = block_partition(&rand_t(&[l, c], 1), &rand_t(&[l, c], 2), &cfg).unwrap();
        prop_assert_eq!(blocks.len(), l.div_ceil(w));
    }
}
