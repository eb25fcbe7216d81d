//! Layer primitives with hand-written backward passes.
//!
//! Kernels are laid out `[ky][kx][cin][cout]`, i.e. element
//! `((ky * 3 + kx) * cin + ci) * cout + co`.

use super::{NetError, Tensor};

pub fn kernel_len(cin: usize, cout: usize) -> usize {
    9 * cin * cout
}

fn check_conv(input: &Tensor, kernel: &[f64], bias: &[f64]) -> Result<(), NetError> {
    let cout = bias.len();
    if cout == 0 || kernel.len() != kernel_len(input.channels, cout) {
        return Err(NetError::ChannelMismatch {
            input_channels: input.channels,
            kernel_len: kernel.len(),
            bias_len: cout,
        });
    }
    Ok(())
}

/// Same-size 3×3 convolution with zero padding and stride 1.
pub fn conv3x3(input: &Tensor, kernel: &[f64], bias: &[f64]) -> Result<Tensor, NetError> {
    check_conv(input, kernel, bias)?;
    let (h, w, cin) = (input.height, input.width, input.channels);
    let cout = bias.len();
    let mut out = Tensor::zeros(h, w, cout);

    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * cout;
            let acc = &mut out.data[o..o + cout];
            acc.copy_from_slice(bias);
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|&ix| ix < w) else {
                        continue;
                    };
                    let i = (iy * w + ix) * cin;
                    let px = &input.data[i..i + cin];
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let row = &kernel[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (a, &k) in acc.iter_mut().zip(row) {
                            *a += v * k;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv3x3`] with respect to its input, kernel and bias.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv3x3_backward(
    input: &Tensor,
    kernel: &[f64],
    bias: &[f64],
    grad_out: &Tensor,
) -> Result<ConvGrads, NetError> {
    let mut grads = ConvGrads {
        input: Tensor::zeros(input.height, input.width, input.channels),
        kernel: vec![0.0; kernel.len()],
        bias: vec![0.0; bias.len()],
    };
    conv3x3_backward_into(
        input,
        kernel,
        grad_out,
        Some(&mut grads.input),
        &mut grads.kernel,
        &mut grads.bias,
    )?;
    Ok(grads)
}

/// Accumulates parameter gradients into `grad_kernel`/`grad_bias` and, when
/// requested, writes the input gradient.
pub fn conv3x3_backward_into(
    input: &Tensor,
    kernel: &[f64],
    grad_out: &Tensor,
    mut grad_input: Option<&mut Tensor>,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<(), NetError> {
    check_conv(input, kernel, grad_bias)?;
    let (h, w, cin) = (input.height, input.width, input.channels);
    let cout = grad_bias.len();
    if grad_out.height != h || grad_out.width != w || grad_out.channels != cout {
        return Err(NetError::DimensionMismatch {
            expected: (h, w),
            actual: (grad_out.height, grad_out.width),
        });
    }
    if let Some(gi) = grad_input.as_deref_mut() {
        gi.data.iter_mut().for_each(|v| *v = 0.0);
    }

    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * cout;
            let g = &grad_out.data[o..o + cout];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &gv) in grad_bias.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|&ix| ix < w) else {
                        continue;
                    };
                    let i = (iy * w + ix) * cin;
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let range = kbase + ci * cout..kbase + (ci + 1) * cout;
                        let v = input.data[i + ci];
                        if v != 0.0 {
                            for (gk, &gv) in grad_kernel[range.clone()].iter_mut().zip(g) {
                                *gk += v * gv;
                            }
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let dot: f64 = kernel[range].iter().zip(g).map(|(k, gv)| k * gv).sum();
                            gi.data[i + ci] += dot;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Routes gradient through positions where the ReLU output was positive.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Flat input index of the winning element for every output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolArgmax {
    pub input_height: usize,
    pub input_width: usize,
    pub winners: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the first element in scan order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolArgmax), NetError> {
    let (h, w, c) = (input.height, input.width, input.channels);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NetError::OddDimensions {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(oh, ow, c);
    let mut winners = vec![0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * y) * w + 2 * x) * c + ch;
                let mut best = input.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if input.data[i] > best {
                        best = input.data[i];
                        best_i = i;
                    }
                }
                let o = (y * ow + x) * c + ch;
                out.data[o] = best;
                winners[o] = best_i;
            }
        }
    }
    Ok((
        out,
        PoolArgmax {
            input_height: h,
            input_width: w,
            winners,
        },
    ))
}

pub fn maxpool2_backward(argmax: &PoolArgmax, grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(argmax.input_height, argmax.input_width, grad_out.channels);
    for (&i, &gv) in argmax.winners.iter().zip(&grad_out.data) {
        g.data[i] += gv;
    }
    g
}

/// Nearest-neighbour ×2 upsampling: each pixel becomes a 2×2 block.
pub fn upsample_nn2(input: &Tensor) -> Tensor {
    let (h, w, c) = (input.height, input.width, input.channels);
    let mut out = Tensor::zeros(2 * h, 2 * w, c);
    for y in 0..2 * h {
        for x in 0..2 * w {
            let src = input.pixel(x / 2, y / 2);
            out.pixel_mut(x, y).copy_from_slice(src);
        }
    }
    out
}

/// Sums the four output gradients of each block.
pub fn upsample_nn2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w, c) = (grad_out.height / 2, grad_out.width / 2, grad_out.channels);
    let mut g = Tensor::zeros(h, w, c);
    for y in 0..2 * h {
        for x in 0..2 * w {
            let src = grad_out.pixel(x, y);
            for (d, &s) in g.pixel_mut(x / 2, y / 2).iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_data(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 4, 5, 2);
        let mut k = vec![0.0; kernel_len(2, 2)];
        for c in 0..2 {
            k[(4 * 2 + c) * 2 + c] = 1.0;
        }
        let y = conv3x3(&x, &k, &[0.0, 0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_padding_arithmetic() {
        let c = 2.5;
        let x = Tensor::from_data(4, 4, 1, vec![c; 16]).unwrap();
        let y = conv3x3(&x, &[1.0; 9], &[0.0]).unwrap();
        assert_eq!(y.pixel(0, 0)[0], 4.0 * c);
        assert_eq!(y.pixel(3, 3)[0], 4.0 * c);
        assert_eq!(y.pixel(1, 0)[0], 6.0 * c);
        assert_eq!(y.pixel(0, 2)[0], 6.0 * c);
        assert_eq!(y.pixel(1, 1)[0], 9.0 * c);
        assert_eq!(y.pixel(2, 2)[0], 9.0 * c);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(2, 2, 3);
        assert!(matches!(
            conv3x3(&x, &[0.0; 9], &[0.0]),
            Err(NetError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (cin, cout) = (2, 3);
        let x = random_tensor(&mut rng, 5, 5, cin);
        let k: Vec<f64> = (0..kernel_len(cin, cout)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = random_tensor(&mut rng, 5, 5, cout);
        // scalar objective: <r, conv(x)>
        let objective = |x: &Tensor, k: &[f64], b: &[f64]| -> f64 {
            let y = conv3x3(x, k, b).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let g = conv3x3_backward(&x, &k, &b, &r).unwrap();
        let h = 1e-5;
        for i in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += h;
            xm.data[i] -= h;
            let fd = (objective(&xp, &k, &b) - objective(&xm, &k, &b)) / (2.0 * h);
            assert!(rel_err(fd, g.input.data[i]) < 1e-4);
        }
        for i in 0..k.len() {
            let (mut kp, mut km) = (k.clone(), k.clone());
            kp[i] += h;
            km[i] -= h;
            let fd = (objective(&x, &kp, &b) - objective(&x, &km, &b)) / (2.0 * h);
            assert!(rel_err(fd, g.kernel[i]) < 1e-4);
        }
        for i in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            let fd = (objective(&x, &k, &bp) - objective(&x, &k, &bm)) / (2.0 * h);
            assert!(rel_err(fd, g.bias[i]) < 1e-4);
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_data(2, 2, 1, vec![1., 2., 3., 4.]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data, vec![4.0]);
        let g = maxpool2_backward(&arg, &Tensor::from_data(1, 1, 1, vec![2.5]).unwrap());
        assert_eq!(g.data, vec![0., 0., 0., 2.5]);

        let c = Tensor::from_data(4, 4, 2, vec![3.0; 32]).unwrap();
        let (y, arg) = maxpool2(&c).unwrap();
        assert_eq!((y.height, y.width), (2, 2));
        assert!(y.data.iter().all(|&v| v == 3.0));
        // ties: first in scan order wins
        assert_eq!(arg.winners[0], 0);

        assert!(matches!(
            maxpool2(&Tensor::zeros(3, 2, 1)),
            Err(NetError::OddDimensions { .. })
        ));
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::from_data(1, 1, 1, vec![5.0]).unwrap();
        assert_eq!(upsample_nn2(&x).data, vec![5.0; 4]);
        let x = Tensor::from_data(2, 2, 1, vec![1., 2., 3., 4.]).unwrap();
        let y = upsample_nn2(&x);
        assert_eq!(
            y.data,
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        assert_eq!(maxpool2(&y).unwrap().0, x);
        let g = upsample_nn2_backward(&y);
        assert_eq!(g.data, vec![4., 8., 12., 16.]);
    }
}
