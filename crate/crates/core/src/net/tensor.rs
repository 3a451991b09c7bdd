//! Channel-major activations and the primitive ops of the network.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;

/// Floating-point element type of the network (`f32` for training, `f64`
/// for gradient verification).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = a · b + beta · c` with `a` m×k and `b` k×n, either optionally
    /// stored transposed (row-major storage of the transpose).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_transposed: bool,
        b: &[Self],
        b_transposed: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f32_lossy(v: f32) -> Self {
        Self::from_f32(v).unwrap()
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn check_gemm_dims<T>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &[T]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        a_transposed: bool,
        b: &[f32],
        b_transposed: bool,
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm_dims(m, k, n, a, b, c);
        let (rsa, csa) = strides(m, k, a_transposed);
        let (rsb, csb) = strides(k, n, b_transposed);
        // SAFETY: slice lengths checked above match the strided extents.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_transposed: bool,
        b: &[f64],
        b_transposed: bool,
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm_dims(m, k, n, a, b, c);
        let (rsa, csa) = strides(m, k, a_transposed);
        let (rsb, csb) = strides(k, n, b_transposed);
        // SAFETY: slice lengths checked above match the strided extents.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// `(C, H, W)` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Act {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Converts an `(H, W, C)` buffer into channel-major layout.
    pub fn from_hwc(h: usize, w: usize, c: usize, hwc: &[f32]) -> Self {
        let mut out = Act::zeros(c, h, w);
        let hw = h * w;
        for p in 0..hw {
            for ch in 0..c {
                out.data[ch * hw + p] = T::from_f32_lossy(hwc[p * c + ch]);
            }
        }
        out
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
}

/// Unfolds a `k×k`, stride-1, zero-padded neighbourhood into columns:
/// row `(ci·k + ky)·k + kx`, column `y·W + x`.
pub fn im2col<T: Scalar>(input: &Act<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (input.c, input.h, input.w);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let src = &input.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sbase = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1]
                        .copy_from_slice(&src[sbase + sx0..sbase + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize) -> Act<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = Act::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dbase = sy as usize * w + (x0 as isize + dx) as usize;
                    let s = &src[y * w + x0..y * w + x1];
                    for (d, &g) in dst[dbase..dbase + (x1 - x0)].iter_mut().zip(s) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 convolution with `k×k` kernels (`k` odd) and zero padding `k/2`.
/// `weight` is `(cout, cin, k, k)`.
pub fn conv_forward<T: Scalar>(input: &Act<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Act<T> {
    let hw = input.plane();
    let kk = input.c * k * k;
    let mut out = Act::zeros(cout, input.h, input.w);
    for (o, b) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(*b);
    }
    if k == 1 {
        T::gemm(cout, kk, hw, weight, false, &input.data, false, T::one(), &mut out.data);
    } else {
        let col = im2col(input, k);
        T::gemm(cout, kk, hw, weight, false, &col, false, T::one(), &mut out.data);
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn conv_backward<T: Scalar>(
    input: &Act<T>,
    weight: &[T],
    grad_out: &Act<T>,
    k: usize,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Act<T> {
    let hw = input.plane();
    let cout = grad_out.c;
    let kk = input.c * k * k;
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb = *gb + grad_out.data[o * hw..(o + 1) * hw].iter().copied().sum();
    }
    if k == 1 {
        T::gemm(cout, hw, kk, &grad_out.data, false, &input.data, true, T::one(), grad_weight);
        let mut grad_in = Act::zeros(input.c, input.h, input.w);
        T::gemm(kk, cout, hw, weight, true, &grad_out.data, false, T::zero(), &mut grad_in.data);
        grad_in
    } else {
        let col = im2col(input, k);
        T::gemm(cout, hw, kk, &grad_out.data, false, &col, true, T::one(), grad_weight);
        let mut grad_col = vec![T::zero(); kk * hw];
        T::gemm(kk, cout, hw, weight, true, &grad_out.data, false, T::zero(), &mut grad_col);
        col2im(&grad_col, input.c, input.h, input.w, k)
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward<T: Scalar>(grad: &mut Act<T>, output: &Act<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling; returns the pooled map and the flat argmax per output.
/// Ties go to the first element in row-major window order.
pub fn maxpool2<T: Scalar>(input: &Act<T>) -> (Act<T>, Vec<u32>) {
    let (h2, w2) = (input.h / 2, input.w / 2);
    let mut out = Act::zeros(input.c, h2, w2);
    let mut idx = vec![0u32; input.c * h2 * w2];
    let hw = input.plane();
    for ch in 0..input.c {
        let src = &input.data[ch * hw..(ch + 1) * hw];
        for y in 0..h2 {
            for x in 0..w2 {
                let mut best = (2 * y) * input.w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * input.w + 2 * x + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = ch * h2 * w2 + y * w2 + x;
                out.data[o] = src[best];
                idx[o] = (ch * hw + best) as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &Act<T>, idx: &[u32], c: usize, h: usize, w: usize) -> Act<T> {
    let mut grad_in = Act::zeros(c, h, w);
    for (g, &i) in grad_out.data.iter().zip(idx) {
        grad_in.data[i as usize] = grad_in.data[i as usize] + *g;
    }
    grad_in
}

/// 2× nearest-neighbour upsampling.
pub fn upsample2<T: Scalar>(input: &Act<T>) -> Act<T> {
    let (h2, w2) = (input.h * 2, input.w * 2);
    let mut out = Act::zeros(input.c, h2, w2);
    for ch in 0..input.c {
        for y in 0..h2 {
            let src_row = ch * input.plane() + (y / 2) * input.w;
            let dst_row = ch * h2 * w2 + y * w2;
            for x in 0..w2 {
                out.data[dst_row + x] = input.data[src_row + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(grad_out: &Act<T>) -> Act<T> {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut grad_in = Act::zeros(grad_out.c, h, w);
    for ch in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                let g = grad_out.data[ch * grad_out.plane() + y * grad_out.w + x];
                let i = ch * h * w + (y / 2) * w + x / 2;
                grad_in.data[i] = grad_in.data[i] + g;
            }
        }
    }
    grad_in
}

/// Channel concatenation of equally sized maps.
pub fn concat<T: Scalar>(parts: &[&Act<T>]) -> Act<T> {
    let (h, w) = (parts[0].h, parts[0].w);
    let c = parts.iter().map(|p| p.c).sum();
    let mut data = Vec::with_capacity(c * h * w);
    for p in parts {
        debug_assert_eq!((p.h, p.w), (h, w));
        data.extend_from_slice(&p.data);
    }
    Act { c, h, w, data }
}

/// Inverse of [`concat`] for gradients.
pub fn split<T: Scalar>(whole: &Act<T>, channels: &[usize]) -> Vec<Act<T>> {
    let hw = whole.plane();
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let a = Act {
                c,
                h: whole.h,
                w: whole.w,
                data: whole.data[start * hw..(start + c) * hw].to_vec(),
            };
            start += c;
            a
        })
        .collect()
}

pub fn add_in_place<T: Scalar>(acc: &mut Act<T>, other: &Act<T>) {
    for (a, &b) in acc.data.iter_mut().zip(&other.data) {
        *a = *a + b;
    }
}
