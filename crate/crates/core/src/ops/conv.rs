//! Cross-correlation through im2col + GEMM.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn spatial_out(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1 stride-1 unpadded convolutions read the input directly as columns.
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let hw_out = g.spatial_out();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oh in 0..g.ho {
                    let ih = (oh * s + kh) as isize - p;
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * s + kw) as isize - p;
                        *v = if iw < 0 || iw >= g.w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let hw_out = g.spatial_out();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oh in 0..g.ho {
                    let ih = (oh * s + kh) as isize - p;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * s + kw) as isize - p;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (patch, hw_out) = (g.patch(), g.spatial_out());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * hw_out;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); patch * hw_out] };
    for b in 0..g.n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let rhs: &[T] = if g.pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        T::gemm(g.cout, patch, hw_out, T::one(), weight, false, rhs, false, T::zero(), ob);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * hw_out..(co + 1) * hw_out].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (patch, hw_out) = (g.patch(), g.spatial_out());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * hw_out;
    let mut dx = need.0.then(|| vec![T::zero(); g.n * in_len]);
    let mut dw = need.1.then(|| vec![T::zero(); g.cout * patch]);
    let mut db = need.2.then(|| vec![T::zero(); g.cout]);
    let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { patch * hw_out }];
    let mut dcols = vec![T::zero(); if need.0 && !g.pointwise() { patch * hw_out } else { 0 }];

    for b in 0..g.n {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for co in 0..g.cout {
                db[co] += dyb[co * hw_out..(co + 1) * hw_out].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let rhs: &[T] = if g.pointwise() {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            T::gemm(g.cout, hw_out, patch, T::one(), dyb, false, rhs, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.pointwise() {
                T::gemm(patch, g.cout, hw_out, T::one(), weight, true, dyb, false, T::zero(), dxb);
            } else {
                T::gemm(patch, g.cout, hw_out, T::one(), weight, true, dyb, false, T::zero(), &mut dcols);
                col2im(g, &dcols, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
