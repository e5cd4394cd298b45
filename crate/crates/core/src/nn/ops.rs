//! Volumetric kernels: 3×3×3 convolution (padding 1) via im2col + GEMM,
//! ceil-mode 2×2×2 max pooling and per-channel batch normalization.
//! Activations are laid out as `[N, C, D, H, W]`, W fastest.

pub const KERNEL: usize = 3;
pub const KERNEL_VOL: usize = KERNEL * KERNEL * KERNEL;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `c = a·b + beta·c` for row-major operands; `*_t` reads the operand transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
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

#[inline]
pub fn conv_out(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

#[inline]
pub fn pool_out(size: usize) -> usize {
    size.div_ceil(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_size: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_size(&self) -> usize {
        conv_out(self.in_size, self.stride)
    }

    fn in_vol(&self) -> usize {
        self.in_size.pow(3)
    }

    fn out_vol(&self) -> usize {
        self.out_size().pow(3)
    }

    fn cols(&self) -> usize {
        self.c_in * KERNEL_VOL
    }
}

/// Output indices `[lo, hi)` along one axis whose input tap `o * stride + k - 1` lies inside the grid.
fn valid_range(o: usize, stride: usize, k: usize, s: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let mut hi = o;
    while hi > lo && (hi - 1) * stride + k > s {
        hi -= 1;
    }
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, input: &[f64], col: &mut [f64]) {
    let s = g.in_size;
    let o = g.out_size();
    let l = g.out_vol();
    let st = g.stride;
    for ci in 0..g.c_in {
        let chan = &input[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for kz in 0..KERNEL {
            let (z0, z1) = valid_range(o, st, kz, s);
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(o, st, ky, s);
                for kx in 0..KERNEL {
                    let (x0, x1) = valid_range(o, st, kx, s);
                    let row = ci * KERNEL_VOL + (kz * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut col[row * l..(row + 1) * l];
                    dst.fill(0.0);
                    for oz in z0..z1 {
                        let iz = oz * st + kz - 1;
                        for oy in y0..y1 {
                            let iy = oy * st + ky - 1;
                            let base = (iz * s + iy) * s + x0 * st + kx - 1;
                            let out_row = &mut dst[(oz * o + oy) * o + x0..(oz * o + oy) * o + x1];
                            if st == 1 {
                                out_row.copy_from_slice(&chan[base..base + (x1 - x0)]);
                            } else {
                                for (i, v) in out_row.iter_mut().enumerate() {
                                    *v = chan[base + i * st];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f64], d_input: &mut [f64]) {
    let s = g.in_size;
    let o = g.out_size();
    let l = g.out_vol();
    let st = g.stride;
    for ci in 0..g.c_in {
        let chan = &mut d_input[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for kz in 0..KERNEL {
            let (z0, z1) = valid_range(o, st, kz, s);
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(o, st, ky, s);
                for kx in 0..KERNEL {
                    let (x0, x1) = valid_range(o, st, kx, s);
                    let row = ci * KERNEL_VOL + (kz * KERNEL + ky) * KERNEL + kx;
                    let src = &col[row * l..(row + 1) * l];
                    for oz in z0..z1 {
                        let iz = oz * st + kz - 1;
                        for oy in y0..y1 {
                            let iy = oy * st + ky - 1;
                            let base = (iz * s + iy) * s + x0 * st + kx - 1;
                            let in_row = &src[(oz * o + oy) * o + x0..(oz * o + oy) * o + x1];
                            if st == 1 {
                                for (d, v) in chan[base..base + (x1 - x0)].iter_mut().zip(in_row) {
                                    *d += v;
                                }
                            } else {
                                for (i, v) in in_row.iter().enumerate() {
                                    chan[base + i * st] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over `n` samples. `weight` is `[c_out, c_in, 3, 3, 3]`.
pub fn conv3d_forward(g: &ConvGeom, n: usize, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let l = g.out_vol();
    let mut out = vec![0.0; n * g.c_out * l];
    let mut col = vec![0.0; g.cols() * l];
    for s in 0..n {
        im2col(g, &input[s * g.c_in * g.in_vol()..(s + 1) * g.c_in * g.in_vol()], &mut col);
        let dst = &mut out[s * g.c_out * l..(s + 1) * g.c_out * l];
        for (co, chunk) in dst.chunks_mut(l).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(g.c_out, g.cols(), l, weight, false, &col, false, 1.0, dst);
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward(
    g: &ConvGeom,
    n: usize,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let l = g.out_vol();
    let j = g.cols();
    let mut col = vec![0.0; j * l];
    let mut d_col = if want_input_grad { vec![0.0; j * l] } else { Vec::new() };
    let mut d_input = if want_input_grad {
        vec![0.0; n * g.c_in * g.in_vol()]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let dout = &d_out[s * g.c_out * l..(s + 1) * g.c_out * l];
        for (co, chunk) in dout.chunks(l).enumerate() {
            d_bias[co] += chunk.iter().sum::<f64>();
        }
        im2col(g, &input[s * g.c_in * g.in_vol()..(s + 1) * g.c_in * g.in_vol()], &mut col);
        gemm(g.c_out, l, j, dout, false, &col, true, 1.0, d_weight);
        if want_input_grad {
            gemm(j, g.c_out, l, weight, true, dout, false, 0.0, &mut d_col);
            col2im(
                g,
                &d_col,
                &mut d_input[s * g.c_in * g.in_vol()..(s + 1) * g.c_in * g.in_vol()],
            );
        }
    }
    want_input_grad.then_some(d_input)
}

/// Ceil-mode 2×2×2 max pooling; returns the output and the flat argmax
/// (within each input channel) for every output element.
pub fn maxpool_forward(n: usize, c: usize, size: usize, input: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let o = pool_out(size);
    let in_vol = size.pow(3);
    let out_vol = o.pow(3);
    let mut out = vec![0.0; n * c * out_vol];
    let mut arg = vec![0u32; n * c * out_vol];
    for nc in 0..n * c {
        let src = &input[nc * in_vol..(nc + 1) * in_vol];
        for oz in 0..o {
            for oy in 0..o {
                for ox in 0..o {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for z in 2 * oz..(2 * oz + 2).min(size) {
                        for y in 2 * oy..(2 * oy + 2).min(size) {
                            for x in 2 * ox..(2 * ox + 2).min(size) {
                                let idx = (z * size + y) * size + x;
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let oi = nc * out_vol + (oz * o + oy) * o + ox;
                    out[oi] = best;
                    arg[oi] = best_idx as u32;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(n: usize, c: usize, size: usize, arg: &[u32], d_out: &[f64]) -> Vec<f64> {
    let in_vol = size.pow(3);
    let out_vol = pool_out(size).pow(3);
    let mut d_in = vec![0.0; n * c * in_vol];
    for nc in 0..n * c {
        for i in 0..out_vol {
            let oi = nc * out_vol + i;
            d_in[nc * in_vol + arg[oi] as usize] += d_out[oi];
        }
    }
    d_in
}

/// Per-channel batch statistics: mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub struct BnTrainOutput {
    pub out: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub stats: BnBatchStats,
}

/// Training-mode batch norm over `[n, c, vol]`, normalizing each channel with
/// its batch mean and biased variance.
pub fn batchnorm_train(n: usize, c: usize, vol: usize, input: &[f64], gamma: &[f64], beta: &[f64]) -> BnTrainOutput {
    let m = (n * vol) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let x = &input[(s * c + ch) * vol..(s * c + ch + 1) * vol];
            mean[ch] += x.iter().sum::<f64>();
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for s in 0..n {
        for ch in 0..c {
            let x = &input[(s * c + ch) * vol..(s * c + ch + 1) * vol];
            var[ch] += x.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = vec![0.0; input.len()];
    let mut x_hat = vec![0.0; input.len()];
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * vol..(s * c + ch + 1) * vol;
            for i in r {
                let xh = (input[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    BnTrainOutput {
        out,
        x_hat,
        inv_std,
        stats: BnBatchStats {
            mean,
            var_unbiased: var.iter().map(|v| v * correction).collect(),
        },
    }
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_eval(
    n: usize,
    c: usize,
    vol: usize,
    input: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let r = (s * c + ch) * vol..(s * c + ch + 1) * vol;
            for i in r {
                out[i] = (input[i] - running_mean[ch]) * scale + beta[ch];
            }
        }
    }
    out
}

/// Backward of training-mode batch norm. Accumulates into `d_gamma`/`d_beta`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward(
    n: usize,
    c: usize,
    vol: usize,
    x_hat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    d_out: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let m = (n * vol) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xh = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * vol..(s * c + ch + 1) * vol;
            for i in r {
                sum_dy[ch] += d_out[i];
                sum_dy_xh[ch] += d_out[i] * x_hat[i];
            }
        }
    }
    for ch in 0..c {
        d_gamma[ch] += sum_dy_xh[ch];
        d_beta[ch] += sum_dy[ch];
    }
    let mut d_in = vec![0.0; d_out.len()];
    for s in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / m;
            let r = (s * c + ch) * vol..(s * c + ch + 1) * vol;
            for i in r {
                d_in[i] = k * (m * d_out[i] - sum_dy[ch] - x_hat[i] * sum_dy_xh[ch]);
            }
        }
    }
    d_in
}
