//! Raw kernels over flat NCHW buffers.

use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Same-padded stride-1 convolution with a `k x k` kernel, `k` odd.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    d: Dims,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    k: usize,
) -> Vec<T> {
    let pad = k / 2;
    let plane = d.plane();
    let mut y = vec![T::zero(); d.n * out_ch * plane];
    for n in 0..d.n {
        for o in 0..out_ch {
            let out = &mut y[(n * out_ch + o) * plane..(n * out_ch + o + 1) * plane];
            out.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..d.c {
                let inp = &x[(n * d.c + c) * plane..(n * d.c + c + 1) * plane];
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(d.h, ky, pad);
                    for kx in 0..k {
                        let wv = weight[((o * d.c + c) * k + ky) * k + kx];
                        let (x_lo, x_hi) = valid_range(d.w, kx, pad);
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - pad;
                            let orow = &mut out[oy * d.w..(oy + 1) * d.w];
                            let irow = &inp[iy * d.w..(iy + 1) * d.w];
                            for ox in x_lo..x_hi {
                                orow[ox] += wv * irow[ox + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(d_weight, d_bias, d_input)`.
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    d: Dims,
    weight: &[T],
    out_ch: usize,
    k: usize,
    dy: &[T],
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let pad = k / 2;
    let plane = d.plane();
    let mut dw = vec![T::zero(); if want_params { weight.len() } else { 0 }];
    let mut db = vec![T::zero(); if want_params { out_ch } else { 0 }];
    let mut dx = vec![T::zero(); x.len()];
    for n in 0..d.n {
        for o in 0..out_ch {
            let g = &dy[(n * out_ch + o) * plane..(n * out_ch + o + 1) * plane];
            if want_params {
                db[o] += g.iter().copied().sum::<T>();
            }
            for c in 0..d.c {
                let base = (n * d.c + c) * plane;
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(d.h, ky, pad);
                    for kx in 0..k {
                        let widx = ((o * d.c + c) * k + ky) * k + kx;
                        let wv = weight[widx];
                        let (x_lo, x_hi) = valid_range(d.w, kx, pad);
                        let mut acc = T::zero();
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - pad;
                            for ox in x_lo..x_hi {
                                let ix = ox + kx - pad;
                                let gv = g[oy * d.w + ox];
                                acc += gv * x[base + iy * d.w + ix];
                                dx[base + iy * d.w + ix] += wv * gv;
                            }
                        }
                        if want_params {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

/// Output positions `[lo, hi)` whose kernel tap `kk` lands inside `[0, len)`.
fn valid_range(len: usize, kk: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kk);
    let hi = (len + pad).saturating_sub(kk).min(len);
    (lo, hi.max(lo))
}

/// 2x2 max pooling, stride 2, trailing odd rows/columns dropped.
pub(crate) fn pool_forward<T: Real>(x: &[T], d: Dims) -> Vec<T> {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut y = Vec::with_capacity(d.n * d.c * oh * ow);
    for plane in x.chunks(d.plane()) {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * d.w + 2 * ox;
                let m = plane[i].max(plane[i + 1]).max(plane[i + d.w]).max(plane[i + d.w + 1]);
                y.push(m);
            }
        }
    }
    y
}

/// Routes each output gradient to the first maximal input of its window.
pub(crate) fn pool_backward<T: Real>(x: &[T], d: Dims, dy: &[T]) -> Vec<T> {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut dx = vec![T::zero(); x.len()];
    for p in 0..d.n * d.c {
        let plane = &x[p * d.plane()..(p + 1) * d.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * d.w + 2 * ox;
                let mut best = i;
                for j in [i + 1, i + d.w, i + d.w + 1] {
                    if plane[j] > plane[best] {
                        best = j;
                    }
                }
                dx[p * d.plane() + best] += dy[(p * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

/// `y = x W + b` with `x: (n, inputs)`, `W: (inputs, outputs)`.
pub(crate) fn dense_forward<T: Real>(
    x: &[T],
    n: usize,
    inputs: usize,
    weight: &[T],
    bias: &[T],
    outputs: usize,
) -> Vec<T> {
    let mut y = Vec::with_capacity(n * outputs);
    for row in x.chunks(inputs).take(n) {
        let start = y.len();
        y.extend_from_slice(bias);
        let out = &mut y[start..];
        for (i, &xv) in row.iter().enumerate() {
            let wrow = &weight[i * outputs..(i + 1) * outputs];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    y
}

pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    n: usize,
    inputs: usize,
    weight: &[T],
    outputs: usize,
    dy: &[T],
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); if want_params { weight.len() } else { 0 }];
    let mut db = vec![T::zero(); if want_params { outputs } else { 0 }];
    let mut dx = vec![T::zero(); n * inputs];
    for r in 0..n {
        let xr = &x[r * inputs..(r + 1) * inputs];
        let gr = &dy[r * outputs..(r + 1) * outputs];
        if want_params {
            for (b, &g) in db.iter_mut().zip(gr) {
                *b += g;
            }
        }
        for i in 0..inputs {
            let wrow = &weight[i * outputs..(i + 1) * outputs];
            let mut acc = T::zero();
            for (&wv, &g) in wrow.iter().zip(gr) {
                acc += wv * g;
            }
            dx[r * inputs + i] = acc;
            if want_params {
                let xv = xr[i];
                for (dwv, &g) in dw[i * outputs..(i + 1) * outputs].iter_mut().zip(gr) {
                    *dwv += xv * g;
                }
            }
        }
    }
    (dw, db, dx)
}

pub(crate) fn relu_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

pub(crate) fn relu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect()
}
