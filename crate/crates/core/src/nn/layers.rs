//! Layer kernels on NHWC buffers.
//!
//! Convolutions are 3x3, stride 1, zero "same" padding, lowered to a GEMM
//! through an im2col buffer whose columns are ordered `(ky, kx, in_channel)`.
//! Weights are stored `[3, 3, in, out]` so the flattened weight matrix is
//! `(9 * in) x out`.

use crate::scalar::Scalar;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub fn numel(&self) -> usize {
        self.batch * self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Fill `cols` (`pixels x 9*channels`) with zero-padded 3x3 patches.
pub fn im2col<T: Scalar>(input: &[T], dims: Dims, cols: &mut [T]) {
    let Dims { batch, height, width, channels } = dims;
    let k = KERNEL * KERNEL * channels;
    debug_assert_eq!(input.len(), dims.numel());
    debug_assert_eq!(cols.len(), dims.pixels() * k);
    let zero = T::zero();
    for n in 0..batch {
        let img = &input[n * height * width * channels..(n + 1) * height * width * channels];
        for y in 0..height {
            for x in 0..width {
                let row = ((n * height + y) * width + x) * k;
                let dst = &mut cols[row..row + k];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        let off = (ky * KERNEL + kx) * channels;
                        let patch = &mut dst[off..off + channels];
                        if sy < 0 || sy >= height as isize || sx < 0 || sx >= width as isize {
                            patch.fill(zero);
                        } else {
                            let src = (sy as usize * width + sx as usize) * channels;
                            patch.copy_from_slice(&img[src..src + channels]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add patch gradients back onto the input layout (adjoint of `im2col`).
pub fn col2im_add<T: Scalar>(dcols: &[T], dims: Dims, dinput: &mut [T]) {
    let Dims { batch, height, width, channels } = dims;
    let k = KERNEL * KERNEL * channels;
    for n in 0..batch {
        let base = n * height * width * channels;
        for y in 0..height {
            for x in 0..width {
                let row = ((n * height + y) * width + x) * k;
                let src = &dcols[row..row + k];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        let off = (ky * KERNEL + kx) * channels;
                        let dst = base + (sy as usize * width + sx as usize) * channels;
                        for c in 0..channels {
                            dinput[dst + c] += src[off + c];
                        }
                    }
                }
            }
        }
    }
}

/// `out[rows x n] = a[rows x k] * w[k x n] + bias`.
pub fn affine<T: Scalar>(a: &[T], rows: usize, k: usize, w: &[T], bias: &[T], out: &mut [T]) {
    let n = bias.len();
    for r in 0..rows {
        out[r * n..(r + 1) * n].copy_from_slice(bias);
    }
    T::gemm(
        rows,
        k,
        n,
        T::one(),
        a,
        (k as isize, 1),
        w,
        (n as isize, 1),
        T::one(),
        out,
        (n as isize, 1),
    );
}

/// Gradients of `affine`: accumulates `dw = a^T * dout`, `db = sum_rows(dout)`
/// and, when requested, writes `da = dout * w^T`.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<T: Scalar>(
    a: &[T],
    rows: usize,
    k: usize,
    w: &[T],
    dout: &[T],
    n: usize,
    dw: &mut [T],
    db: &mut [T],
    da: Option<&mut [T]>,
) {
    T::gemm(
        k,
        rows,
        n,
        T::one(),
        a,
        (1, k as isize),
        dout,
        (n as isize, 1),
        T::one(),
        dw,
        (n as isize, 1),
    );
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&dout[r * n..(r + 1) * n]) {
            *acc += *g;
        }
    }
    if let Some(da) = da {
        T::gemm(
            rows,
            n,
            k,
            T::one(),
            dout,
            (n as isize, 1),
            w,
            (1, n as isize),
            T::zero(),
            da,
            (k as isize, 1),
        );
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    let zero = T::zero();
    for v in x.iter_mut() {
        if !(*v > zero) {
            *v = zero;
        }
    }
}

/// Mask `grad` by the ReLU derivative, read from the post-activation values.
/// The derivative at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(activated: &[T], grad: &mut [T]) {
    let zero = T::zero();
    for (g, a) in grad.iter_mut().zip(activated) {
        if !(*a > zero) {
            *g = zero;
        }
    }
}

pub fn pooled_dims(dims: Dims) -> Dims {
    Dims {
        batch: dims.batch,
        height: dims.height / 2,
        width: dims.width / 2,
        channels: dims.channels,
    }
}

/// 2x2 stride-2 max pooling. `argmax[i]` records the flat input index that
/// produced `out[i]`; ties go to the first element in row-major window order.
pub fn maxpool2<T: Scalar>(input: &[T], dims: Dims, out: &mut [T], argmax: &mut [u32]) {
    let od = pooled_dims(dims);
    let c = dims.channels;
    for n in 0..dims.batch {
        for oy in 0..od.height {
            for ox in 0..od.width {
                let obase = ((n * od.height + oy) * od.width + ox) * c;
                for ch in 0..c {
                    let mut best_idx = 0usize;
                    let mut best = T::neg_infinity();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((n * dims.height + 2 * oy + dy) * dims.width + 2 * ox + dx) * c + ch;
                            let v = input[idx];
                            if v > best || (dy == 0 && dx == 0) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + ch] = best;
                    argmax[obase + ch] = best_idx as u32;
                }
            }
        }
    }
}

/// Route pooled gradients to the recorded argmax positions.
pub fn maxpool2_backward<T: Scalar>(dout: &[T], argmax: &[u32], dinput: &mut [T]) {
    dinput.fill(T::zero());
    for (g, &idx) in dout.iter().zip(argmax) {
        dinput[idx as usize] += *g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_center_patch_and_padding() {
        // 1 image, 2x2, 1 channel
        let input = [1.0f64, 2.0, 3.0, 4.0];
        let dims = Dims { batch: 1, height: 2, width: 2, channels: 1 };
        let mut cols = vec![0.0; 4 * 9];
        im2col(&input, dims, &mut cols);
        // pixel (0,0): neighbourhood rows -1..1, cols -1..1
        assert_eq!(&cols[0..9], &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
        // pixel (1,1)
        assert_eq!(&cols[27..36], &[1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let dims = Dims { batch: 2, height: 3, width: 4, channels: 2 };
        let x: Vec<f64> = (0..dims.numel()).map(|i| (i as f64 * 0.37).sin()).collect();
        let k = 9 * dims.channels;
        let y: Vec<f64> = (0..dims.pixels() * k).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, dims, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, dims, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_tie_breaks_to_first() {
        let dims = Dims { batch: 1, height: 2, width: 2, channels: 1 };
        let input = [5.0f32, 5.0, 5.0, 5.0];
        let mut out = [0.0f32; 1];
        let mut arg = [9u32; 1];
        maxpool2(&input, dims, &mut out, &mut arg);
        assert_eq!(out[0], 5.0);
        assert_eq!(arg[0], 0);

        let input = [1.0f32, 3.0, 3.0, 2.0];
        maxpool2(&input, dims, &mut out, &mut arg);
        assert_eq!(arg[0], 1);
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        let dims = Dims { batch: 2, height: 4, width: 6, channels: 3 };
        let input: Vec<f64> = (0..dims.numel()).map(|i| ((i * 7919) % 113) as f64).collect();
        let od = pooled_dims(dims);
        let mut out = vec![0.0; od.numel()];
        let mut arg = vec![0u32; od.numel()];
        maxpool2(&input, dims, &mut out, &mut arg);
        let dout: Vec<f64> = (0..od.numel()).map(|i| i as f64 * 0.25 - 3.0).collect();
        let mut din = vec![0.0; dims.numel()];
        maxpool2_backward(&dout, &arg, &mut din);
        let a: f64 = dout.iter().sum();
        let b: f64 = din.iter().sum();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn relu_derivative_zero_at_zero() {
        let act = [0.0f64, 1.0, 0.0];
        let mut g = [1.0, 1.0, 1.0];
        relu_backward(&act, &mut g);
        assert_eq!(g, [0.0, 1.0, 0.0]);
        let mut x = [-1.0f64, 0.0, 2.0, f64::NAN];
        relu_inplace(&mut x);
        assert_eq!(&x[..3], &[0.0, 0.0, 2.0]);
    }
}
