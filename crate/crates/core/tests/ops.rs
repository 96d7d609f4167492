mod common;

use common::*;
use enteroseg_core::{PoolKind, Tape, Tape64, Tensor, Tensor64};

#[test]
fn conv_scalar_kernel_scales() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = t.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
    let b = t.constant(Tensor::zeros(&[1]));
    let y = t.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 3, 3]);
    assert!(t.value(y).data().iter().all(|&v| v == 2.0));
}

#[test]
fn conv_identity_center_kernel() {
    let mut r = rng(3);
    let xin = random(&[2, 3, 6, 5], -1.0, 1.0, &mut r);
    let mut k = vec![0.0; 3 * 3 * 9];
    for c in 0..3 {
        k[(c * 3 + c) * 9 + 4] = 1.0;
    }
    let mut t = Tape64::new();
    let x = t.constant(xin.clone());
    let w = t.constant(Tensor::from_f64(&[3, 3, 3, 3], &k).unwrap());
    let b = t.constant(Tensor::zeros(&[3]));
    let y = t.conv2d(x, w, Some(b), 1, 1).unwrap();
    assert_eq!(t.value(y), &xin);
}

#[test]
fn conv_matches_naive_loops() {
    for seed in 0..10 {
        let mut r = rng(seed);
        for (stride, pad) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
            let x = random(&[1, 2, 5, 5], -1.0, 1.0, &mut r);
            let w = random(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
            let b = random(&[3], -1.0, 1.0, &mut r);
            let want = naive_conv2d(&x, &w, b.data(), stride, pad);
            let mut t = Tape64::new();
            let (xv, wv, bv) = (t.constant(x), t.constant(w), t.constant(b));
            let y = t.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
            assert_eq!(t.shape(y), want.shape());
            assert!(t.value(y).max_abs_diff(&want) < 1e-6);
        }
    }
}

#[test]
fn conv_pointwise_path_matches_naive() {
    let mut r = rng(11);
    let x = random(&[2, 4, 3, 5], -1.0, 1.0, &mut r);
    let w = random(&[3, 4, 1, 1], -1.0, 1.0, &mut r);
    let want = naive_conv2d(&x, &w, &[0.0; 3], 1, 0);
    let mut t = Tape64::new();
    let (xv, wv) = (t.constant(x), t.constant(w));
    let y = t.conv2d(xv, wv, None, 1, 0).unwrap();
    assert!(t.value(y).max_abs_diff(&want) < 1e-12);
}

#[test]
fn conv_reports_channel_mismatch() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let err = t.conv2d(x, w, None, 1, 0).unwrap_err().to_string();
    assert!(err.contains("2 channels") && err.contains("expects 3"), "{err}");
}

#[test]
fn conv_rejects_oversized_kernel() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let w = t.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(t.conv2d(x, w, None, 1, 1).is_err());
    assert!(t.conv2d(x, w, None, 0, 2).is_err());
}

#[test]
fn pow_examples() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::from_f64(&[2], &[2.0, -3.0]).unwrap());
    let y1 = t.pow(x, 1).unwrap();
    assert_eq!(t.value(y1).data(), &[2.0, -3.0]);
    let y2 = t.pow(x, 2).unwrap();
    assert_eq!(t.value(y2).data(), &[4.0, 9.0]);
    assert!(t.pow(x, 0).is_err());
}

#[test]
fn activation_examples() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let r = t.relu(x);
    assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = t.constant(Tensor::zeros(&[1]));
    let s = t.sigmoid(z);
    assert_eq!(t.value(s).data(), &[0.5]);
    let big = t.constant(Tensor::from_f64(&[4], &[-800.0, -40.0, 40.0, 800.0]).unwrap());
    let s = t.sigmoid(big);
    assert!(t.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let th = t.tanh(big);
    assert!(t.value(th).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
}

#[test]
fn softmax_uniform_and_stable() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::full(&[1, 4, 2, 2], 3.7));
    let y = t.softmax_channels(x).unwrap();
    assert!(t.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = t.constant(Tensor::from_f64(&[1, 2, 1, 1], &[1000.0, 0.0]).unwrap());
    let y = t.softmax_channels(x).unwrap();
    let v = t.value(y).data();
    assert!(v.iter().all(|v| v.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-12);

    let one = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(t.softmax_channels(one).is_err());
}

#[test]
fn softmax_columns_sum_to_one_and_shift_invariant() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let logits = random(&[2, 5, 3, 4], -20.0, 20.0, &mut r);
        let shift = random(&[2, 1, 3, 4], -50.0, 50.0, &mut r);
        let mut shifted = logits.clone();
        for b in 0..2 {
            for c in 0..5 {
                for p in 0..12 {
                    shifted.data_mut()[(b * 5 + c) * 12 + p] += shift.data()[b * 12 + p];
                }
            }
        }
        let mut t = Tape64::new();
        let (a, b) = (t.constant(logits), t.constant(shifted));
        let (pa, pb) = (t.softmax_channels(a).unwrap(), t.softmax_channels(b).unwrap());
        let v = t.value(pa).data();
        for b in 0..2 {
            for p in 0..12 {
                let s: f64 = (0..5).map(|c| v[(b * 5 + c) * 12 + p]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert!(t.value(pa).max_abs_diff(t.value(pb)) < 1e-6);
    }
}

fn naive_pool(x: &Tensor64, kind: PoolKind, k: usize, stride: usize) -> Tensor64 {
    let (n, c, h, w) = x.dims4().unwrap();
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let vals: Vec<f64> = (0..k)
                    .flat_map(|i| (0..k).map(move |j| (i, j)))
                    .map(|(i, j)| x.data()[p * h * w + (oh * stride + i) * w + ow * stride + j])
                    .collect();
                out.push(match kind {
                    PoolKind::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    PoolKind::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                });
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out).unwrap()
}

#[test]
fn pool_examples_and_oracle() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let m = t.pool2d(x, PoolKind::Max, 2, 2).unwrap();
    assert_eq!(t.value(m).data(), &[4.0]);
    let a = t.pool2d(x, PoolKind::Avg, 2, 2).unwrap();
    assert_eq!(t.value(a).data(), &[2.5]);

    for seed in 0..10 {
        let mut r = rng(seed);
        let x = random(&[2, 3, 7, 6], -1.0, 1.0, &mut r);
        for (kind, k, s) in [(PoolKind::Max, 2, 2), (PoolKind::Max, 3, 2), (PoolKind::Max, 3, 1), (PoolKind::Avg, 2, 2), (PoolKind::Avg, 3, 1)] {
            let want = naive_pool(&x, kind, k, s);
            let mut t = Tape64::new();
            let xv = t.constant(x.clone());
            let y = t.pool2d(xv, kind, k, s).unwrap();
            match kind {
                PoolKind::Max => assert_eq!(t.value(y), &want),
                PoolKind::Avg => assert!(t.value(y).max_abs_diff(&want) < 1e-15),
            }
        }
    }
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut t = Tape64::new();
    let x = t.variable(Tensor::full(&[1, 1, 2, 2], 1.0));
    let m = t.pool2d(x, PoolKind::Max, 2, 2).unwrap();
    let s = t.sum(m);
    let g = t.grads(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn padded_max_pool_halves_even_inputs() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 4, 4], &(0..16).map(|v| -(v as f64)).collect::<Vec<_>>()).unwrap());
    let y = t.max_pool2d(x, 3, 2, 1).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 2, 2]);
    // padding never wins even though every real value is negative
    assert_eq!(t.value(y).data(), &[0.0, -1.0, -4.0, -5.0]);
}

#[test]
fn upsample_examples() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 1.0]).unwrap());
    let y = t.upsample_bilinear(x, 2).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 2, 4]);
    assert_eq!(&t.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);

    let c = t.constant(Tensor::full(&[2, 3, 3, 2], -1.5));
    let y = t.upsample_bilinear(c, 3).unwrap();
    assert_eq!(t.shape(y), &[2, 3, 9, 6]);
    assert!(t.value(y).data().iter().all(|&v| (v + 1.5).abs() < 1e-15));
    assert!(t.upsample_bilinear(c, 1).is_err());
}

#[test]
fn upsample_then_average_is_close_to_smooth_input() {
    use rand::Rng;
    for seed in 0..10 {
        let mut r = rng(seed);
        // random low-frequency field in [0, 1]; white noise is not smooth enough for this bound
        let (a, b, fx, fy) = (r.gen_range(0.0..0.5), r.gen_range(0.0..0.5), r.gen_range(0.1..0.6), r.gen_range(0.1..0.6));
        let data: Vec<f64> = (0..2 * 36)
            .map(|i| {
                let (y, x) = ((i % 36) / 6, i % 6);
                0.5 + a * (fx * x as f64).sin() + b * (fy * y as f64).cos() * 0.5
            })
            .collect();
        let xin = Tensor::from_f64(&[1, 2, 6, 6], &data).unwrap();
        let mut t = Tape64::new();
        let x = t.constant(xin.clone());
        let up = t.upsample_bilinear(x, 2).unwrap();
        let down = t.avg_pool2d(up, 2, 2).unwrap();
        assert!(t.value(down).max_abs_diff(&xin) <= 0.2);
    }
}

#[test]
fn batch_norm_train_standardizes_and_eval_identity() {
    let mut r = rng(5);
    let xin = random(&[4, 3, 5, 5], -3.0, 7.0, &mut r);
    let mut t = Tape64::new();
    let x = t.constant(xin.clone());
    let g = t.constant(Tensor::full(&[3], 1.0));
    let b = t.constant(Tensor::zeros(&[3]));
    let (y, _, _) = t.batch_norm_train(x, g, b, 1e-5).unwrap();
    let v = t.value(y).data();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| v[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
    }
    let e = t.batch_norm_eval(x, g, b, &[0.0; 3], &[1.0; 3], 0.0).unwrap();
    assert_eq!(t.value(e), &xin);
}

#[test]
fn batch_norm_train_rejects_single_value_channels() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let g = t.constant(Tensor::full(&[2], 1.0));
    let b = t.constant(Tensor::zeros(&[2]));
    assert!(t.batch_norm_train(x, g, b, 1e-5).is_err());
}

#[test]
fn backward_examples() {
    let mut store = enteroseg_core::ParamStore64::new();
    let id = store.add("x", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap(), true).unwrap();
    let mut t = Tape::new();
    let x = t.param(&store, id);
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq);
    t.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[2.0, 4.0, 6.0]);
    // accumulation without reset
    t.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[4.0, 8.0, 12.0]);
    store.zero_grad();
    assert_eq!(store.get(id).grad.data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_detached_and_non_scalar() {
    let mut t = Tape64::new();
    let c = t.constant(Tensor::full(&[2], 1.0));
    let s = t.sum(c);
    assert!(matches!(t.grads(s), Err(enteroseg_core::Error::Detached)));
    let v = t.variable(Tensor::full(&[2], 1.0));
    assert!(matches!(t.grads(v), Err(enteroseg_core::Error::NotScalar(_))));
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut r = rng(9);
        let mut t = Tape64::new();
        let x = t.constant(random(&[2, 3, 8, 8], -1.0, 1.0, &mut r));
        let w = t.constant(random(&[4, 3, 3, 3], -1.0, 1.0, &mut r));
        let y = t.conv2d(x, w, None, 1, 1).unwrap();
        let y = t.upsample_bilinear(y, 2).unwrap();
        let y = t.softmax_channels(y).unwrap();
        t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
