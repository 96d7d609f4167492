#![allow(dead_code)]

use enteroseg_core::{Tensor, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor64 {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
pub fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Direct cross-correlation with zero padding and broadcast bias.
pub fn naive_conv2d(x: &Tensor64, w: &Tensor64, b: &[f64], stride: usize, pad: usize) -> Tensor64 {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, k, _) = w.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let xv = |b: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((b * cin + c) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = Vec::with_capacity(n * cout * ho * wo);
    for bn in 0..n {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for kh in 0..k {
                            for kw in 0..k {
                                let wv = w.data()[((co * cin + ci) * k + kh) * k + kw];
                                s += wv * xv(bn, ci, (oh * stride + kh) as isize - pad as isize, (ow * stride + kw) as isize - pad as isize);
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

/// Random filled ellipse on a noisy background, with its mask.
pub fn ellipse_sample(id: usize, size: usize, rng: &mut ChaCha8Rng) -> enteroseg_core::train::Sample {
    let s = size as f64;
    let cx = rng.gen_range(0.3 * s..0.7 * s);
    let cy = rng.gen_range(0.3 * s..0.7 * s);
    let a = rng.gen_range(0.12 * s..0.25 * s);
    let b = rng.gen_range(0.12 * s..0.25 * s);
    let mut image = Vec::with_capacity(size * size);
    let mut target = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / a;
            let dy = (y as f64 + 0.5 - cy) / b;
            let inside = dx * dx + dy * dy <= 1.0;
            let noise = rng.gen_range(-0.1..0.1);
            image.push((if inside { 1.0 } else { -1.0 } + noise) as f32);
            target.push(inside as u8);
        }
    }
    enteroseg_core::train::Sample { id: format!("e{id}"), width: size, height: size, image, target }
}
