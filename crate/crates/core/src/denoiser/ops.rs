//! Layer kernels over channel-last feature maps, each with a matching
//! backward pass. Backward functions accumulate parameter gradients into the
//! provided slices and return the input gradient.

use crate::tensor::{gemm, Feat, Scalar};

const LN_EPS: f64 = 1e-6;

/// Pointwise (1x1) convolution: `y = x W + b`, `W` is `[cin, cout]`.
pub fn linear_fwd<T: Scalar>(x: &Feat<T>, w: &[T], b: Option<&[T]>, cout: usize) -> Feat<T> {
    let p = x.pixels();
    let mut y = x.with_channels(cout);
    if let Some(b) = b {
        for row in y.data.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
        gemm(p, x.c, cout, &x.data, false, w, false, T::one(), &mut y.data);
    } else {
        gemm(p, x.c, cout, &x.data, false, w, false, T::zero(), &mut y.data);
    }
    y
}

pub fn linear_bwd<T: Scalar>(
    x: &Feat<T>,
    w: &[T],
    dy: &Feat<T>,
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Feat<T>> {
    let (p, cin, cout) = (x.pixels(), x.c, dy.c);
    gemm(cin, p, cout, &x.data, true, &dy.data, false, T::one(), dw);
    if let Some(db) = db {
        for row in dy.data.chunks_exact(cout) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += *v;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = x.zeros_like();
        gemm(p, cout, cin, &dy.data, false, w, true, T::zero(), &mut dx.data);
        dx
    })
}

pub struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// Layer normalization over channels at every pixel, with affine `g`, `b`.
pub fn layernorm_fwd<T: Scalar>(x: &Feat<T>, g: &[T], b: &[T]) -> (Feat<T>, LnCache<T>) {
    let c = x.c;
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let eps = T::from_f64c(LN_EPS);
    let mut y = x.zeros_like();
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut rstd = Vec::with_capacity(x.pixels());
    for ((xi, yi), hi) in x.data.chunks_exact(c).zip(y.data.chunks_exact_mut(c)).zip(xhat.chunks_exact_mut(c)) {
        let mu = xi.iter().copied().sum::<T>() * inv_c;
        let var = xi.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
        let r = T::one() / (var + eps).sqrt();
        for k in 0..c {
            let h = (xi[k] - mu) * r;
            hi[k] = h;
            yi[k] = h * g[k] + b[k];
        }
        rstd.push(r);
    }
    (y, LnCache { xhat, rstd })
}

pub fn layernorm_bwd<T: Scalar>(cache: &LnCache<T>, g: &[T], dy: &Feat<T>, dg: &mut [T], db: &mut [T]) -> Feat<T> {
    let c = dy.c;
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let mut dx = dy.zeros_like();
    let mut dh = vec![T::zero(); c];
    for (((dyi, hi), dxi), &r) in dy
        .data
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
        .zip(dx.data.chunks_exact_mut(c))
        .zip(&cache.rstd)
    {
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for k in 0..c {
            dg[k] += dyi[k] * hi[k];
            db[k] += dyi[k];
            dh[k] = dyi[k] * g[k];
            m1 += dh[k];
            m2 += dh[k] * hi[k];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        for k in 0..c {
            dxi[k] = r * (dh[k] - m1 - hi[k] * m2);
        }
    }
    dx
}

/// Depthwise 3x3 convolution with zero padding, per frame. `w` is `[9, c]`.
pub fn dwconv_fwd<T: Scalar>(x: &Feat<T>, w: &[T], b: &[T]) -> Feat<T> {
    let (h, wd, c) = (x.h, x.w, x.c);
    let mut y = x.zeros_like();
    for n in 0..x.n {
        let base = n * h * wd * c;
        for yy in 0..h {
            for xx in 0..wd {
                let o = base + (yy * wd + xx) * c;
                let out = &mut y.data[o..o + c];
                out.copy_from_slice(b);
                for ky in 0..3 {
                    let sy = yy as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= wd as isize {
                            continue;
                        }
                        let i = base + (sy as usize * wd + sx as usize) * c;
                        let wk = &w[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                        for ((o, &v), &k) in out.iter_mut().zip(&x.data[i..i + c]).zip(wk) {
                            *o += v * k;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn dwconv_bwd<T: Scalar>(x: &Feat<T>, w: &[T], dy: &Feat<T>, dw: &mut [T], db: &mut [T]) -> Feat<T> {
    let (h, wd, c) = (x.h, x.w, x.c);
    let mut dx = x.zeros_like();
    for n in 0..x.n {
        let base = n * h * wd * c;
        for yy in 0..h {
            for xx in 0..wd {
                let o = base + (yy * wd + xx) * c;
                let g = &dy.data[o..o + c];
                for (acc, &v) in db.iter_mut().zip(g) {
                    *acc += v;
                }
                for ky in 0..3 {
                    let sy = yy as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= wd as isize {
                            continue;
                        }
                        let i = base + (sy as usize * wd + sx as usize) * c;
                        let k = (ky * 3 + kx) * c;
                        let wk = &w[k..k + c];
                        let dwk = &mut dw[k..k + c];
                        let xi = &x.data[i..i + c];
                        let dxi = &mut dx.data[i..i + c];
                        for ch in 0..c {
                            dwk[ch] += xi[ch] * g[ch];
                            dxi[ch] += wk[ch] * g[ch];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Splits channels in half and multiplies the halves.
pub fn simple_gate_fwd<T: Scalar>(x: &Feat<T>) -> Feat<T> {
    let half = x.c / 2;
    let mut y = x.with_channels(half);
    for (xi, yi) in x.data.chunks_exact(x.c).zip(y.data.chunks_exact_mut(half)) {
        for k in 0..half {
            yi[k] = xi[k] * xi[k + half];
        }
    }
    y
}

pub fn simple_gate_bwd<T: Scalar>(x: &Feat<T>, dy: &Feat<T>) -> Feat<T> {
    let half = x.c / 2;
    let mut dx = x.zeros_like();
    for ((xi, dyi), dxi) in x.data.chunks_exact(x.c).zip(dy.data.chunks_exact(half)).zip(dx.data.chunks_exact_mut(x.c)) {
        for k in 0..half {
            dxi[k] = dyi[k] * xi[k + half];
            dxi[k + half] = dyi[k] * xi[k];
        }
    }
    dx
}

pub struct ScaCache<T> {
    pooled: Feat<T>,
    att: Vec<T>,
}

/// Simplified channel attention: `y * (mean_hw(y) W + b)` per frame.
pub fn sca_fwd<T: Scalar>(y: &Feat<T>, w: &[T], b: &[T]) -> (Feat<T>, ScaCache<T>) {
    let (hw, c) = (y.h * y.w, y.c);
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut pooled = Feat::zeros(y.n, 1, 1, c);
    for n in 0..y.n {
        let acc = &mut pooled.data[n * c..(n + 1) * c];
        for px in y.data[n * hw * c..(n + 1) * hw * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    let att = linear_fwd(&pooled, w, Some(b), c).data;
    let mut out = y.zeros_like();
    for n in 0..y.n {
        let a = &att[n * c..(n + 1) * c];
        for (o, px) in out.data[n * hw * c..(n + 1) * hw * c].chunks_exact_mut(c).zip(y.data[n * hw * c..].chunks_exact(c)) {
            for k in 0..c {
                o[k] = px[k] * a[k];
            }
        }
    }
    (out, ScaCache { pooled, att })
}

pub fn sca_bwd<T: Scalar>(
    y: &Feat<T>,
    cache: &ScaCache<T>,
    w: &[T],
    dout: &Feat<T>,
    dw: &mut [T],
    db: &mut [T],
) -> Feat<T> {
    let (hw, c) = (y.h * y.w, y.c);
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut dy = y.zeros_like();
    let mut datt = Feat::zeros(y.n, 1, 1, c);
    for n in 0..y.n {
        let a = &cache.att[n * c..(n + 1) * c];
        let da = &mut datt.data[n * c..(n + 1) * c];
        let r = n * hw * c..(n + 1) * hw * c;
        for ((g, px), d) in dout.data[r.clone()]
            .chunks_exact(c)
            .zip(y.data[r.clone()].chunks_exact(c))
            .zip(dy.data[r].chunks_exact_mut(c))
        {
            for k in 0..c {
                d[k] = g[k] * a[k];
                da[k] += g[k] * px[k];
            }
        }
    }
    let dpooled = linear_bwd(&cache.pooled, w, &datt, dw, Some(db), true).unwrap();
    for n in 0..y.n {
        let dp = &dpooled.data[n * c..(n + 1) * c];
        for d in dy.data[n * hw * c..(n + 1) * hw * c].chunks_exact_mut(c) {
            for k in 0..c {
                d[k] += dp[k] * inv;
            }
        }
    }
    dy
}

/// `x + y * s` with a per-channel scale `s`.
pub fn scaled_residual_fwd<T: Scalar>(x: &Feat<T>, y: &Feat<T>, s: &[T]) -> Feat<T> {
    let c = x.c;
    let mut out = x.clone();
    for (o, yi) in out.data.chunks_exact_mut(c).zip(y.data.chunks_exact(c)) {
        for k in 0..c {
            o[k] += yi[k] * s[k];
        }
    }
    out
}

/// Returns the gradient flowing into the scaled branch; the skip branch
/// receives `dout` unchanged.
pub fn scaled_residual_bwd<T: Scalar>(y: &Feat<T>, s: &[T], dout: &Feat<T>, ds: &mut [T]) -> Feat<T> {
    let c = y.c;
    let mut dy = y.zeros_like();
    for ((d, g), yi) in dy.data.chunks_exact_mut(c).zip(dout.data.chunks_exact(c)).zip(y.data.chunks_exact(c)) {
        for k in 0..c {
            ds[k] += g[k] * yi[k];
            d[k] = g[k] * s[k];
        }
    }
    dy
}

/// Adds a per-clip channel vector to every pixel of that clip's frames.
pub fn add_clip_vector_fwd<T: Scalar>(x: &Feat<T>, v: &[T], frames: usize) -> Feat<T> {
    let c = x.c;
    let per_frame = x.h * x.w * c;
    let mut out = x.clone();
    for (n, frame) in out.data.chunks_exact_mut(per_frame).enumerate() {
        let vb = &v[(n / frames) * c..(n / frames + 1) * c];
        for px in frame.chunks_exact_mut(c) {
            for k in 0..c {
                px[k] += vb[k];
            }
        }
    }
    out
}

pub fn add_clip_vector_bwd<T: Scalar>(dout: &Feat<T>, frames: usize) -> Vec<T> {
    let c = dout.c;
    let per_frame = dout.h * dout.w * c;
    let clips = dout.n / frames;
    let mut dv = vec![T::zero(); clips * c];
    for (n, frame) in dout.data.chunks_exact(per_frame).enumerate() {
        let acc = &mut dv[(n / frames) * c..(n / frames + 1) * c];
        for px in frame.chunks_exact(c) {
            for k in 0..c {
                acc[k] += px[k];
            }
        }
    }
    dv
}

/// 2x2 space-to-depth; output channel index is `(dy * 2 + dx) * c + ch`.
pub fn space_to_depth<T: Scalar>(x: &Feat<T>) -> Feat<T> {
    let (h2, w2, c) = (x.h / 2, x.w / 2, x.c);
    let mut y = Feat::zeros(x.n, h2, w2, 4 * c);
    for n in 0..x.n {
        for yy in 0..h2 {
            for xx in 0..w2 {
                let o = ((n * h2 + yy) * w2 + xx) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ((n * x.h + 2 * yy + dy) * x.w + 2 * xx + dx) * c;
                        let k = o + (dy * 2 + dx) * c;
                        y.data[k..k + c].copy_from_slice(&x.data[i..i + c]);
                    }
                }
            }
        }
    }
    y
}

pub fn depth_to_space<T: Scalar>(y: &Feat<T>) -> Feat<T> {
    let c = y.c / 4;
    let (h, w) = (y.h * 2, y.w * 2);
    let mut x = Feat::zeros(y.n, h, w, c);
    for n in 0..y.n {
        for yy in 0..y.h {
            for xx in 0..y.w {
                let o = ((n * y.h + yy) * y.w + xx) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ((n * h + 2 * yy + dy) * w + 2 * xx + dx) * c;
                        let k = o + (dy * 2 + dx) * c;
                        x.data[i..i + c].copy_from_slice(&y.data[k..k + c]);
                    }
                }
            }
        }
    }
    x
}

/// Pixel shuffle with factor 2: output `(2y+i, 2x+j, ch)` reads input channel
/// `ch * 4 + i * 2 + j`.
pub fn pixel_shuffle<T: Scalar>(x: &Feat<T>) -> Feat<T> {
    let co = x.c / 4;
    let (h, w) = (x.h * 2, x.w * 2);
    let mut y = Feat::zeros(x.n, h, w, co);
    for n in 0..x.n {
        for yy in 0..x.h {
            for xx in 0..x.w {
                let src = &x.data[((n * x.h + yy) * x.w + xx) * x.c..][..x.c];
                for i in 0..2 {
                    for j in 0..2 {
                        let o = ((n * h + 2 * yy + i) * w + 2 * xx + j) * co;
                        for ch in 0..co {
                            y.data[o + ch] = src[ch * 4 + i * 2 + j];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn pixel_unshuffle<T: Scalar>(y: &Feat<T>) -> Feat<T> {
    let co = y.c;
    let (h, w) = (y.h / 2, y.w / 2);
    let mut x = Feat::zeros(y.n, h, w, co * 4);
    for n in 0..y.n {
        for yy in 0..h {
            for xx in 0..w {
                let dst = ((n * h + yy) * w + xx) * co * 4;
                for i in 0..2 {
                    for j in 0..2 {
                        let o = ((n * y.h + 2 * yy + i) * y.w + 2 * xx + j) * co;
                        for ch in 0..co {
                            x.data[dst + ch * 4 + i * 2 + j] = y.data[o + ch];
                        }
                    }
                }
            }
        }
    }
    x
}

/// 3x3x3 convolution over (frame, row, column) with zero padding in all three
/// dimensions; frames never mix across clip boundaries. Lowered to im2col +
/// GEMM, weight is `[27 * cin, cout]` with row index
/// `((dt * 3 + dy) * 3 + dx) * cin + ci`.
pub fn im2col3d<T: Scalar>(x: &Feat<T>, frames: usize) -> Vec<T> {
    let (h, w, c) = (x.h, x.w, x.c);
    let k = 27 * c;
    let mut col = vec![T::zero(); x.pixels() * k];
    for n in 0..x.n {
        let f = n % frames;
        for yy in 0..h {
            for xx in 0..w {
                let row = &mut col[((n * h + yy) * w + xx) * k..][..k];
                for dt in 0..3 {
                    let sf = f as isize + dt as isize - 1;
                    if sf < 0 || sf >= frames as isize {
                        continue;
                    }
                    let sn = (n as isize + dt as isize - 1) as usize;
                    for dy in 0..3 {
                        let sy = yy as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = xx as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let i = ((sn * h + sy as usize) * w + sx as usize) * c;
                            let o = ((dt * 3 + dy) * 3 + dx) * c;
                            row[o..o + c].copy_from_slice(&x.data[i..i + c]);
                        }
                    }
                }
            }
        }
    }
    col
}

pub fn col2im3d<T: Scalar>(col: &[T], shape: (usize, usize, usize, usize), frames: usize) -> Feat<T> {
    let (nn, h, w, c) = shape;
    let k = 27 * c;
    let mut x = Feat::zeros(nn, h, w, c);
    for n in 0..nn {
        let f = n % frames;
        for yy in 0..h {
            for xx in 0..w {
                let row = &col[((n * h + yy) * w + xx) * k..][..k];
                for dt in 0..3 {
                    let sf = f as isize + dt as isize - 1;
                    if sf < 0 || sf >= frames as isize {
                        continue;
                    }
                    let sn = (n as isize + dt as isize - 1) as usize;
                    for dy in 0..3 {
                        let sy = yy as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = xx as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let i = ((sn * h + sy as usize) * w + sx as usize) * c;
                            let o = ((dt * 3 + dy) * 3 + dx) * c;
                            for (d, &v) in x.data[i..i + c].iter_mut().zip(&row[o..o + c]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv3d_fwd<T: Scalar>(x: &Feat<T>, frames: usize, w: &[T], b: &[T], cout: usize) -> (Feat<T>, Vec<T>) {
    let col = im2col3d(x, frames);
    let p = x.pixels();
    let mut y = x.with_channels(cout);
    for row in y.data.chunks_exact_mut(cout) {
        row.copy_from_slice(b);
    }
    gemm(p, 27 * x.c, cout, &col, false, w, false, T::one(), &mut y.data);
    (y, col)
}

#[allow(clippy::too_many_arguments)]
pub fn conv3d_bwd<T: Scalar>(
    col: &[T],
    in_shape: (usize, usize, usize, usize),
    frames: usize,
    w: &[T],
    dy: &Feat<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Feat<T>> {
    let p = dy.pixels();
    let k = 27 * in_shape.3;
    let cout = dy.c;
    gemm(k, p, cout, col, true, &dy.data, false, T::one(), dw);
    for row in dy.data.chunks_exact(cout) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
    need_dx.then(|| {
        let mut dcol = vec![T::zero(); p * k];
        gemm(p, cout, k, &dy.data, false, w, true, T::zero(), &mut dcol);
        col2im3d(&dcol, in_shape, frames)
    })
}
