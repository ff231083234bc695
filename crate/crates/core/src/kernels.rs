//! Raw compute kernels, generic over the scalar type.
//!
//! Everything here works on flat row-major buffers with explicit dims.
//! f32 is the normal compute type; the same code instantiated at f64 backs
//! the finite-difference gradient checks. Convolutions are 3x3, stride 1,
//! Same (zero) padding throughout; that is the only shape this stack needs.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub(crate) trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Default
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn maxs(self, other: Self) -> Self;
    /// C = alpha*A*B + beta*C with explicit strides, row-major buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn from_usize(v: usize) -> Self {
                v as $t
            }
            fn to_f32(self) -> f32 {
                self as f32
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maxs(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Buf<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Buf<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Buf<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Buf {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Buf<T> {
        Buf {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (n, h, w, c) of a rank-4 buffer.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        debug_assert_eq!(self.shape.len(), 4);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// (rows, cols) of a rank-2 buffer.
    pub fn dims2(&self) -> (usize, usize) {
        debug_assert_eq!(self.shape.len(), 2);
        (self.shape[0], self.shape[1])
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Buf<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }
}

/// out[m,n] = a[m,k] * b[k,n], optionally reading either input as its
/// transpose via stride swaps (no copies).
pub(crate) fn matmul_into<T: Scalar>(
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
    out: &mut [T],
) {
    assert_eq!(a.len(), m * k, "matmul: lhs length");
    assert_eq!(b.len(), k * n, "matmul: rhs length");
    assert_eq!(out.len(), m * n, "matmul: out length");
    let (rsa, csa) = if a_trans {
        (1, m as isize) // stored [k, m]
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize) // stored [n, k]
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(T::ZERO);
        }
        return;
    }
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
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// convolution (3x3, stride 1, Same zero padding)
// ---------------------------------------------------------------------------

pub(crate) const KERNEL: usize = 3;

/// Unfold 3x3 windows into a column matrix of shape [n*h*w, 9*cin].
/// Column order matches a [3,3,cin,cout] kernel flattened row-major, so the
/// convolution is a single `cols x kernel` product.
pub(crate) fn im2col<T: Scalar>(input: &[T], n: usize, h: usize, w: usize, cin: usize, cols: &mut [T]) {
    let row_len = KERNEL * KERNEL * cin;
    assert_eq!(cols.len(), n * h * w * row_len);
    assert_eq!(input.len(), n * h * w * cin);
    let mut out_row = 0usize;
    for ni in 0..n {
        let img = &input[ni * h * w * cin..(ni + 1) * h * w * cin];
        for y in 0..h {
            for x in 0..w {
                let dst = &mut cols[out_row * row_len..(out_row + 1) * row_len];
                let mut col = 0usize;
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst[col..col + KERNEL * cin].fill(T::ZERO);
                        col += KERNEL * cin;
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            dst[col..col + cin].fill(T::ZERO);
                        } else {
                            let src = (sy as usize * w + sx as usize) * cin;
                            dst[col..col + cin].copy_from_slice(&img[src..src + cin]);
                        }
                        col += cin;
                    }
                }
                out_row += 1;
            }
        }
    }
}

/// Scatter-add a column-matrix gradient back onto the input image layout.
/// The adjoint of [`im2col`]; window entries that fell in the zero padding
/// are dropped.
pub(crate) fn col2im_accumulate<T: Scalar>(
    dcols: &[T],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    dinput: &mut [T],
) {
    let row_len = KERNEL * KERNEL * cin;
    assert_eq!(dcols.len(), n * h * w * row_len);
    assert_eq!(dinput.len(), n * h * w * cin);
    let mut row = 0usize;
    for ni in 0..n {
        let dimg = &mut dinput[ni * h * w * cin..(ni + 1) * h * w * cin];
        for y in 0..h {
            for x in 0..w {
                let src = &dcols[row * row_len..(row + 1) * row_len];
                let mut col = 0usize;
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        col += KERNEL * cin;
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            let dst = (sy as usize * w + sx as usize) * cin;
                            for ci in 0..cin {
                                dimg[dst + ci] += src[col + ci];
                            }
                        }
                        col += cin;
                    }
                }
                row += 1;
            }
        }
    }
}

/// im2col + GEMM convolution. `kernel` is [3,3,cin,cout] row-major.
pub(crate) fn conv2d_gemm<T: Scalar>(
    input: &Buf<T>,
    kernel: &[T],
    bias: &[T],
    cout: usize,
) -> Buf<T> {
    let (n, h, w, cin) = input.dims4();
    debug_assert_eq!(kernel.len(), KERNEL * KERNEL * cin * cout);
    let rows = n * h * w;
    let mut cols = vec![T::ZERO; rows * KERNEL * KERNEL * cin];
    im2col(&input.data, n, h, w, cin, &mut cols);
    let mut out = vec![T::ZERO; rows * cout];
    matmul_into(&cols, false, kernel, false, rows, KERNEL * KERNEL * cin, cout, false, &mut out);
    if !bias.is_empty() {
        for row in out.chunks_exact_mut(cout) {
            for (o, &b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
    }
    Buf::new(&[n, h, w, cout], out)
}

/// Direct window-iteration convolution, the reference the GEMM path is
/// checked against.
pub(crate) fn conv2d_naive<T: Scalar>(
    input: &Buf<T>,
    kernel: &[T],
    bias: &[T],
    cout: usize,
) -> Buf<T> {
    let (n, h, w, cin) = input.dims4();
    let mut out = vec![T::ZERO; n * h * w * cout];
    for ni in 0..n {
        let img = &input.data[ni * h * w * cin..];
        for y in 0..h {
            for x in 0..w {
                let base = ((ni * h + y) * w + x) * cout;
                for co in 0..cout {
                    let mut acc = if bias.is_empty() { T::ZERO } else { bias[co] };
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let px = (sy as usize * w + sx as usize) * cin;
                            let kb = (ky * KERNEL + kx) * cin;
                            for ci in 0..cin {
                                acc += img[px + ci] * kernel[(kb + ci) * cout + co];
                            }
                        }
                    }
                    out[base + co] = acc;
                }
            }
        }
    }
    Buf::new(&[n, h, w, cout], out)
}

/// Gradients of the GEMM convolution.
/// Returns (dinput, dkernel, dbias).
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Buf<T>,
    kernel: &[T],
    cout: usize,
    dout: &Buf<T>,
    want_param_grads: bool,
) -> (Buf<T>, Vec<T>, Vec<T>) {
    let (n, h, w, cin) = input.dims4();
    let rows = n * h * w;
    let patch = KERNEL * KERNEL * cin;

    let mut dkernel = Vec::new();
    let mut dbias = Vec::new();
    if want_param_grads {
        // dW = cols^T x dOut
        let mut cols = vec![T::ZERO; rows * patch];
        im2col(&input.data, n, h, w, cin, &mut cols);
        dkernel = vec![T::ZERO; patch * cout];
        matmul_into(&cols, true, &dout.data, false, patch, rows, cout, false, &mut dkernel);
        dbias = vec![T::ZERO; cout];
        for row in dout.data.chunks_exact(cout) {
            for (d, &g) in dbias.iter_mut().zip(row) {
                *d += g;
            }
        }
    }

    // dCols = dOut x W^T, then scatter back to image layout.
    let mut dcols = vec![T::ZERO; rows * patch];
    matmul_into(&dout.data, false, kernel, true, rows, cout, patch, false, &mut dcols);
    let mut dinput = vec![T::ZERO; n * h * w * cin];
    col2im_accumulate(&dcols, n, h, w, cin, &mut dinput);

    (Buf::new(&[n, h, w, cin], dinput), dkernel, dbias)
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

/// 2x2 non-overlapping max pool. Also returns the flat input index of each
/// window maximum for the backward pass (first occurrence wins on ties).
pub(crate) fn maxpool2<T: Scalar>(input: &Buf<T>) -> (Buf<T>, Vec<u32>) {
    let (n, h, w, c) = input.dims4();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    debug_assert!(input.numel() <= u32::MAX as usize);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::ZERO; n * oh * ow * c];
    let mut argmax = vec![0u32; out.len()];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = T::from_f64(f64::NEG_INFINITY);
                    let mut best_idx = 0u32;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (((ni * h + oy * 2 + dy) * w) + ox * 2 + dx) * c + ci;
                            let v = input.data[idx];
                            if v > best {
                                best = v;
                                best_idx = idx as u32;
                            }
                        }
                    }
                    let o = ((ni * oh + oy) * ow + ox) * c + ci;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (Buf::new(&[n, oh, ow, c], out), argmax)
}

pub(crate) fn maxpool2_backward<T: Scalar>(
    dout: &Buf<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Buf<T> {
    let mut dinput = Buf::zeros(input_shape);
    for (g, &idx) in dout.data.iter().zip(argmax) {
        dinput.data[idx as usize] += *g;
    }
    dinput
}

// ---------------------------------------------------------------------------
// batch normalization (channels-last)
// ---------------------------------------------------------------------------

pub(crate) struct BnTrainCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Inference-form batchnorm with fixed statistics.
pub(crate) fn batchnorm_infer<T: Scalar>(
    input: &Buf<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Buf<T> {
    let c = *input.shape.last().unwrap();
    let scale: Vec<T> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let shift: Vec<T> = (0..c).map(|i| beta[i] - mean[i] * scale[i]).collect();
    let mut out = vec![T::ZERO; input.numel()];
    for (orow, irow) in out.chunks_exact_mut(c).zip(input.data.chunks_exact(c)) {
        for i in 0..c {
            orow[i] = irow[i] * scale[i] + shift[i];
        }
    }
    Buf::new(&input.shape, out)
}

/// Training-form batchnorm: normalizes with the batch's own statistics
/// (biased variance) and returns what the backward pass needs.
pub(crate) fn batchnorm_train<T: Scalar>(
    input: &Buf<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Buf<T>, BnTrainCache<T>) {
    let c = *input.shape.last().unwrap();
    let rows = input.numel() / c;
    let m = T::from_usize(rows);
    let mut mean = vec![T::ZERO; c];
    for row in input.data.chunks_exact(c) {
        for i in 0..c {
            mean[i] += row[i];
        }
    }
    for v in mean.iter_mut() {
        *v = *v / m;
    }
    let mut var = vec![T::ZERO; c];
    for row in input.data.chunks_exact(c) {
        for i in 0..c {
            let d = row[i] - mean[i];
            var[i] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v = *v / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::ZERO; input.numel()];
    let mut out = vec![T::ZERO; input.numel()];
    for ((xrow, hrow), orow) in input
        .data
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c))
    {
        for i in 0..c {
            let h = (xrow[i] - mean[i]) * inv_std[i];
            hrow[i] = h;
            orow[i] = h * gamma[i] + beta[i];
        }
    }
    (
        Buf::new(&input.shape, out),
        BnTrainCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Backward through training-form batchnorm (batch statistics participate
/// in the gradient). Returns (dinput, dgamma, dbeta).
pub(crate) fn batchnorm_train_backward<T: Scalar>(
    dout: &Buf<T>,
    cache: &BnTrainCache<T>,
    gamma: &[T],
) -> (Buf<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let rows = dout.numel() / c;
    let m = T::from_usize(rows);
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for (drow, hrow) in dout.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for i in 0..c {
            dgamma[i] += drow[i] * hrow[i];
            dbeta[i] += drow[i];
        }
    }
    // dx = gamma*inv_std/M * (M*dout - dbeta - xhat*dgamma)
    let coef: Vec<T> = (0..c)
        .map(|i| gamma[i] * cache.inv_std[i] / m)
        .collect();
    let mut dinput = vec![T::ZERO; dout.numel()];
    for ((drow, hrow), xrow) in dout
        .data
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
        .zip(dinput.chunks_exact_mut(c))
    {
        for i in 0..c {
            xrow[i] = coef[i] * (m * drow[i] - dbeta[i] - hrow[i] * dgamma[i]);
        }
    }
    (Buf::new(&dout.shape, dinput), dgamma, dbeta)
}

/// Backward through inference-form batchnorm (statistics are constants).
pub(crate) fn batchnorm_infer_backward<T: Scalar>(
    dout: &Buf<T>,
    gamma: &[T],
    var: &[T],
    eps: T,
) -> Buf<T> {
    let c = gamma.len();
    let scale: Vec<T> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let mut dinput = vec![T::ZERO; dout.numel()];
    for (drow, xrow) in dout.data.chunks_exact(c).zip(dinput.chunks_exact_mut(c)) {
        for i in 0..c {
            xrow[i] = drow[i] * scale[i];
        }
    }
    Buf::new(&dout.shape, dinput)
}

// ---------------------------------------------------------------------------
// elementwise and dense layers
// ---------------------------------------------------------------------------

pub(crate) fn relu<T: Scalar>(input: &Buf<T>) -> Buf<T> {
    let data = input.data.iter().map(|&v| v.maxs(T::ZERO)).collect();
    Buf::new(&input.shape, data)
}

/// dx = dout where the forward output was positive. Uses the forward output
/// so the zero set matches exactly.
pub(crate) fn relu_backward<T: Scalar>(dout: &Buf<T>, out: &Buf<T>) -> Buf<T> {
    let data = dout
        .data
        .iter()
        .zip(&out.data)
        .map(|(&g, &o)| if o > T::ZERO { g } else { T::ZERO })
        .collect();
    Buf::new(&dout.shape, data)
}

/// out[n,u] = input[n,d] * weight[d,u] + bias[u]
pub(crate) fn dense<T: Scalar>(input: &Buf<T>, weight: &[T], bias: &[T], units: usize) -> Buf<T> {
    let (n, d) = input.dims2();
    let mut out = vec![T::ZERO; n * units];
    matmul_into(&input.data, false, weight, false, n, d, units, false, &mut out);
    if !bias.is_empty() {
        for row in out.chunks_exact_mut(units) {
            for (o, &b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
    }
    Buf::new(&[n, units], out)
}

/// Returns (dinput, dweight, dbias).
pub(crate) fn dense_backward<T: Scalar>(
    input: &Buf<T>,
    weight: &[T],
    units: usize,
    dout: &Buf<T>,
    want_param_grads: bool,
) -> (Buf<T>, Vec<T>, Vec<T>) {
    let (n, d) = input.dims2();
    let mut dweight = Vec::new();
    let mut dbias = Vec::new();
    if want_param_grads {
        dweight = vec![T::ZERO; d * units];
        matmul_into(&input.data, true, &dout.data, false, d, n, units, false, &mut dweight);
        dbias = vec![T::ZERO; units];
        for row in dout.data.chunks_exact(units) {
            for (b, &g) in dbias.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    let mut dinput = vec![T::ZERO; n * d];
    matmul_into(&dout.data, false, weight, true, n, units, d, false, &mut dinput);
    (Buf::new(&[n, d], dinput), dweight, dbias)
}

/// Row-wise softmax with max subtraction; never produces NaN or Inf for
/// finite inputs.
pub(crate) fn softmax<T: Scalar>(logits: &Buf<T>) -> Buf<T> {
    let (n, k) = logits.dims2();
    let mut out = vec![T::ZERO; n * k];
    for (orow, irow) in out.chunks_exact_mut(k).zip(logits.data.chunks_exact(k)) {
        let mut max = irow[0];
        for &v in irow.iter() {
            max = max.maxs(v);
        }
        let mut sum = T::ZERO;
        for (o, &v) in orow.iter_mut().zip(irow) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
    Buf::new(&[n, k], out)
}

/// Backward through the softmax Jacobian: dz_i = p_i * (dp_i - sum_j dp_j p_j).
pub(crate) fn softmax_backward<T: Scalar>(dout: &Buf<T>, probs: &Buf<T>) -> Buf<T> {
    let (n, k) = probs.dims2();
    let mut dinput = vec![T::ZERO; n * k];
    for ((drow, prow), xrow) in dout
        .data
        .chunks_exact(k)
        .zip(probs.data.chunks_exact(k))
        .zip(dinput.chunks_exact_mut(k))
    {
        let mut dot = T::ZERO;
        for i in 0..k {
            dot += drow[i] * prow[i];
        }
        for i in 0..k {
            xrow[i] = prow[i] * (drow[i] - dot);
        }
    }
    Buf::new(&[n, k], dinput)
}

/// Per-channel spatial mean: [n,h,w,c] -> [n,c].
pub(crate) fn global_avg_pool<T: Scalar>(input: &Buf<T>) -> Buf<T> {
    let (n, h, w, c) = input.dims4();
    let inv = T::ONE / T::from_usize(h * w);
    let mut out = vec![T::ZERO; n * c];
    for ni in 0..n {
        let orow = &mut out[ni * c..(ni + 1) * c];
        for row in input.data[ni * h * w * c..(ni + 1) * h * w * c].chunks_exact(c) {
            for i in 0..c {
                orow[i] += row[i];
            }
        }
        for o in orow.iter_mut() {
            *o = *o * inv;
        }
    }
    Buf::new(&[n, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf4(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Buf<f32> {
        Buf::new(&[n, h, w, c], data)
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y — the defining
        // property of the transpose pair used by conv backward.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (n, h, w, c) = (2, 4, 3, 2);
        let x: Vec<f32> = (0..n * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cols_len = n * h * w * 9 * c;
        let y: Vec<f32> = (0..cols_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = vec![0.0; cols_len];
        im2col(&x, n, h, w, c, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(&a, &b)| (a * b) as f64).sum();
        let mut back = vec![0.0f32; x.len()];
        col2im_accumulate(&y, n, h, w, c, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(&a, &b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn naive_and_gemm_conv_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, h, w, cin, cout) = (2, 5, 6, 3, 4);
        let input = buf4(n, h, w, cin, (0..n * h * w * cin).map(|_| rng.gen_range(-1.0..1.0f32)).collect());
        let kernel: Vec<f32> = (0..9 * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = conv2d_naive(&input, &kernel, &bias, cout);
        let b = conv2d_gemm(&input, &kernel, &bias, cout);
        for (x, y) in a.data.iter().zip(&b.data) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            assert!(rel <= 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn maxpool_picks_window_max() {
        let input = buf4(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let (out, argmax) = maxpool2(&input);
        assert_eq!(out.shape, vec![1, 1, 1, 1]);
        assert_eq!(out.data, vec![4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let logits: Buf<f32> = Buf::new(&[2, 3], vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]);
        let p = softmax(&logits);
        for v in &p.data {
            assert!(v.is_finite());
        }
        assert!((p.data[0] - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(p.data[3], 1.0);
        assert_eq!(p.data[4], 0.0);
    }

    #[test]
    fn dense_matches_hand_matmul() {
        let input = Buf::new(&[1, 2], vec![1.0, 2.0]);
        let weight = vec![1.0, 0.0, 0.0, 2.0]; // [[1,0],[0,2]]
        let bias = vec![1.0, 1.0];
        let out = dense(&input, &weight, &bias, 2);
        assert_eq!(out.data, vec![2.0, 5.0]);
    }

    #[test]
    fn gap_means_channels() {
        let mut data = vec![0.0f32; 16];
        for (i, v) in data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let input = buf4(1, 4, 4, 1, data);
        let out = global_avg_pool(&input);
        assert_eq!(out.data, vec![7.5]);
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let input = buf4(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let (out, cache) = batchnorm_train(&input, &[1.0], &[0.0], 0.0);
        let mean: f32 = out.data.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((cache.batch_mean[0] - 2.5).abs() < 1e-6);
        assert!((cache.batch_var[0] - 1.25).abs() < 1e-6);
        let var: f32 = out.data.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-5);
    }
}
