//! Forward convolution against an independent nested-loop oracle.

use cgs_tensor::{conv2d, Real, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct definition: for every output element, walk the kernel window and
/// accumulate, treating out-of-bounds input as zero padding.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    input: &[Real],
    kernel: &[Real],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    padding: usize,
) -> Vec<Real> {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        for ci in 0..cin {
                            let iy = oy as isize * stride as isize + ky as isize - padding as isize;
                            let ix = ox as isize * stride as isize + kx as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let iv = input[((iy as usize) * w + ix as usize) * cin + ci];
                            let kv = kernel[((ky * kw + kx) * cin + ci) * cout + co];
                            acc += iv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    out
}

#[test]
fn all_ones_window_sum() {
    let input = vec![1.0; 9];
    let kernel = vec![1.0; 4];
    let expected = conv_oracle(&input, &kernel, 3, 3, 1, 2, 2, 1, 1, 0);
    assert_eq!(expected, vec![4.0; 4]);
    let out = conv2d(
        &Tensor::from_vec(&[3, 3, 1], input).unwrap(),
        &Tensor::from_vec(&[2, 2, 1, 1], kernel).unwrap(),
        1,
        0,
    )
    .unwrap();
    assert_eq!(out.values(), expected);
}

#[test]
fn random_shapes_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for &(h, w, cin, kh, kw, cout, stride, padding) in &[
        (5usize, 7usize, 1usize, 3usize, 3usize, 2usize, 1usize, 1usize),
        (6, 6, 3, 3, 3, 4, 2, 1),
        (4, 9, 2, 1, 1, 3, 1, 0),
        (8, 5, 2, 2, 4, 1, 2, 2),
        (7, 7, 4, 5, 3, 2, 3, 0),
    ] {
        let input: Vec<Real> = (0..h * w * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel: Vec<Real> = (0..kh * kw * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = conv_oracle(&input, &kernel, h, w, cin, kh, kw, cout, stride, padding);
        let out = conv2d(
            &Tensor::from_vec(&[h, w, cin], input).unwrap(),
            &Tensor::from_vec(&[kh, kw, cin, cout], kernel).unwrap(),
            stride,
            padding,
        )
        .unwrap();
        assert_eq!(out.shape()[2], cout);
        for (a, b) in out.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{h}x{w}x{cin} k{kh}x{kw} s{stride} p{padding}");
        }
    }
}
