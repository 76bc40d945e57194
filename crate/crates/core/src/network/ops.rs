//! Per-sample tensor kernels (channel-major `C x H x W`) with their adjoints.

use super::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::ZERO; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }
}

/// `C (+)= op(A) op(B)` on contiguous row-major storage. `a_t`/`b_t` mean the
/// operand is stored transposed (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    // SAFETY: lengths checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
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
        )
    }
}

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output columns `[lo, hi)` for kernel offset `kx` along an axis of
    /// length `n` producing `n_out` outputs.
    fn valid_range(&self, kx: usize, n: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        // need 0 <= o*s + off < n
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((n as isize - off) + s - 1) / s;
        (
            lo.clamp(0, n_out as isize) as usize,
            hi.clamp(0, n_out as isize) as usize,
        )
    }
}

/// Unfolds `input` into a `(cin*k*k) x (h_out*w_out)` matrix.
pub fn im2col<T: Real>(input: &Tensor<T>, g: &ConvGeom, col: &mut Vec<T>) {
    let (ho, wo) = g.out_dims(input.h, input.w);
    let p = ho * wo;
    col.clear();
    col.resize(g.cin * g.k * g.k * p, T::ZERO);
    for ci in 0..g.cin {
        let src = &input.data[ci * input.plane()..(ci + 1) * input.plane()];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, input.h, ho);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, input.w, wo);
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        let n = ox_hi - ox_lo;
                        d[ox_lo..ox_hi].copy_from_slice(&src[iy * input.w + ix0..iy * input.w + ix0 + n]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            d[ox] = src[iy * input.w + ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an input gradient.
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, grad_in: &mut Tensor<T>) {
    let (ho, wo) = g.out_dims(grad_in.h, grad_in.w);
    let p = ho * wo;
    let (h, w) = (grad_in.h, grad_in.w);
    let plane = h * w;
    for ci in 0..g.cin {
        let dst = &mut grad_in.data[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, h, ho);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, w, wo);
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in ox_lo..ox_hi {
                        dst[iy * w + ox * g.stride + kx - g.pad] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Convolution with bias. `col` is scratch space.
pub fn conv_forward<T: Real>(input: &Tensor<T>, g: &ConvGeom, weight: &[T], bias: &[T], col: &mut Vec<T>) -> Tensor<T> {
    debug_assert_eq!(input.c, g.cin);
    debug_assert_eq!(weight.len(), g.weight_len());
    let (ho, wo) = g.out_dims(input.h, input.w);
    let p = ho * wo;
    let mut out = Tensor::zeros(g.cout, ho, wo);
    for (co, b) in bias.iter().enumerate() {
        out.data[co * p..(co + 1) * p].fill(*b);
    }
    let rows = g.cin * g.k * g.k;
    if g.is_pointwise() {
        matmul(g.cout, rows, p, weight, false, &input.data, false, &mut out.data, true);
    } else {
        im2col(input, g, col);
        matmul(g.cout, rows, p, weight, false, col, false, &mut out.data, true);
    }
    out
}

/// Accumulates weight and bias gradients for one convolution and, when
/// requested, returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    input: &Tensor<T>,
    g: &ConvGeom,
    weight: &[T],
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
    col: &mut Vec<T>,
) -> Option<Tensor<T>> {
    let p = grad_out.plane();
    let rows = g.cin * g.k * g.k;
    for (co, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out.data[co * p..(co + 1) * p].iter().copied().sum::<T>();
    }
    let pointwise = g.is_pointwise();
    let cols: &[T] = if pointwise {
        &input.data
    } else {
        im2col(input, g, col);
        col
    };
    // dW[cout x rows] += dY[cout x p] * col^T
    matmul(g.cout, p, rows, &grad_out.data, false, cols, true, grad_weight, true);
    if !need_input_grad {
        return None;
    }
    let mut grad_in = Tensor::zeros(input.c, input.h, input.w);
    if pointwise {
        matmul(
            rows,
            g.cout,
            p,
            weight,
            true,
            &grad_out.data,
            false,
            &mut grad_in.data,
            false,
        );
    } else {
        let mut dcol = vec![T::ZERO; rows * p];
        matmul(rows, g.cout, p, weight, true, &grad_out.data, false, &mut dcol, false);
        col2im(&dcol, g, &mut grad_in);
    }
    Some(grad_in)
}

pub fn relu_inplace<T: Real>(t: &mut Tensor<T>) {
    t.data.iter_mut().for_each(|v| *v = v.relu());
}

/// Masks `grad` by `output > 0` where `output` is a ReLU result.
pub fn relu_backward_inplace<T: Real>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// 2x2 stride-2 max pooling; also returns the winning input index per output.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (ho, wo) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, ho, wo);
    let mut idx = vec![0u32; input.c * ho * wo];
    for c in 0..input.c {
        let base = c * input.plane();
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * input.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * input.w + 2 * ox + dx;
                    if input.data[i] > input.data[best] {
                        best = i;
                    }
                }
                let o = (c * ho + oy) * wo + ox;
                out.data[o] = input.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Real>(grad_out: &Tensor<T>, idx: &[u32], grad_in: &mut Tensor<T>) {
    for (g, &i) in grad_out.data.iter().zip(idx) {
        grad_in.data[i as usize] += *g;
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input.h * 2, input.w * 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        for y in 0..h {
            let src = &input.data[(c * input.h + y / 2) * input.w..(c * input.h + y / 2 + 1) * input.w];
            let dst = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut out = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                out.data[(c * h + y / 2) * w + x / 2] += grad_out.data[(c * grad_out.h + y) * grad_out.w + x];
            }
        }
    }
    out
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split_channels<T: Real>(t: Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * t.plane();
    let (h, w, c) = (t.h, t.w, t.c);
    let mut data = t.data;
    let rest = data.split_off(cut);
    (
        Tensor::from_vec(first, h, w, data),
        Tensor::from_vec(c - first, h, w, rest),
    )
}
