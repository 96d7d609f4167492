use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Max pooling with implicit `-inf` padding. Returns the pooled values and the
/// flat input index each output was taken from (first maximum in scan order).
pub(crate) fn max_forward<T: Scalar>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for kh in 0..g.k {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for kw in 0..g.k {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        let idx = base + ih as usize * g.w + iw as usize;
                        if best_idx == usize::MAX || x[idx] > best || (x[idx].is_nan() && !best.is_nan()) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_backward<T: Scalar>(input_len: usize, arg: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// Unpadded average pooling.
pub(crate) fn avg_forward<T: Scalar>(g: &PoolGeom, x: &[T]) -> Vec<T> {
    let norm = T::one() / T::lit((g.k * g.k) as f64);
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let mut s = T::zero();
                for kh in 0..g.k {
                    let row = base + (oh * g.stride + kh) * g.w + ow * g.stride;
                    for kw in 0..g.k {
                        s += x[row + kw];
                    }
                }
                out.push(s * norm);
            }
        }
    }
    out
}

pub(crate) fn avg_backward<T: Scalar>(g: &PoolGeom, dy: &[T]) -> Vec<T> {
    let norm = T::one() / T::lit((g.k * g.k) as f64);
    let mut dx = vec![T::zero(); g.planes * g.h * g.w];
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let v = dy[(p * g.ho + oh) * g.wo + ow] * norm;
                for kh in 0..g.k {
                    let row = base + (oh * g.stride + kh) * g.w + ow * g.stride;
                    for kw in 0..g.k {
                        dx[row + kw] += v;
                    }
                }
            }
        }
    }
    dx
}
