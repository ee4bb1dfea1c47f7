//! Network operations: convolution, pooling, upsampling, batch
//! normalization, softmax, and per-pixel class gathering.
//!
//! Layout is channels-last throughout: images are `[H, W, C]`, convolution
//! kernels are `[kh, kw, Cin, Cout]`. The inner loops run over contiguous
//! `Cout` kernel rows so the compiler can vectorize them; conv dominates
//! the training-time profile.

use crate::{Real, Result, Tensor, TensorError};

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            msg: format!("expected rank {rank}"),
        });
    }
    Ok(())
}

/// 2D convolution, `[H, W, Cin] * [kh, kw, Cin, Cout] -> [H', W', Cout]`
/// with `H' = floor((H + 2*padding - kh)/stride) + 1` (same for W).
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", kernel, 4)?;
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, kcin, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(TensorError::BadArgument {
            op: "conv2d",
            msg: "stride must be positive".into(),
        });
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(TensorError::BadArgument {
            op: "conv2d",
            msg: format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        });
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;

    let data = input.with_data(|x| {
        kernel.with_data(|k| {
            conv2d_forward(x, k, h, w, cin, kh, kw, cout, oh, ow, stride, padding)
        })
    });

    let in_t = input.clone();
    let ker_t = kernel.clone();
    Ok(Tensor::from_op(
        vec![oh, ow, cout],
        data,
        vec![input.clone(), kernel.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let (dx, dk) = in_t.with_data(|x| {
                    ker_t.with_data(|k| {
                        conv2d_backward(g, x, k, h, w, cin, kh, kw, cout, oh, ow, stride, padding)
                    })
                });
                vec![Some(dx), Some(dk)]
            })
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[Real],
    k: &[Real],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
) -> Vec<Real> {
    let mut out = vec![0.0; oh * ow * cout];
    let mut acc = vec![0.0; cout];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * w + ix as usize) * cin;
                    let k_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = x[in_base + ci];
                        let krow = &k[k_base + ci * cout..k_base + (ci + 1) * cout];
                        for (a, kv) in acc.iter_mut().zip(krow) {
                            *a += v * kv;
                        }
                    }
                }
            }
            out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout].copy_from_slice(&acc);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    g: &[Real],
    x: &[Real],
    k: &[Real],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
) -> (Vec<Real>, Vec<Real>) {
    let mut dx = vec![0.0; h * w * cin];
    let mut dk = vec![0.0; kh * kw * cin * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let grow = &g[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * w + ix as usize) * cin;
                    let k_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let krow = &k[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let mut acc = 0.0;
                        for (gv, kv) in grow.iter().zip(krow) {
                            acc += gv * kv;
                        }
                        dx[in_base + ci] += acc;
                        let v = x[in_base + ci];
                        let dkrow = &mut dk[k_base + ci * cout..k_base + (ci + 1) * cout];
                        for (dkv, gv) in dkrow.iter_mut().zip(grow) {
                            *dkv += v * gv;
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Per-channel bias add: `[H, W, C] + [C]`.
pub fn bias_add(input: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank("bias_add", input, 3)?;
    expect_rank("bias_add", bias, 1)?;
    let c = input.shape()[2];
    if bias.shape()[0] != c {
        return Err(TensorError::ShapeMismatch {
            op: "bias_add",
            lhs: input.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let rows = input.numel() / c;
    let data = input.with_data(|x| {
        bias.with_data(|b| {
            let mut out = Vec::with_capacity(x.len());
            for r in 0..rows {
                for ci in 0..c {
                    out.push(x[r * c + ci] + b[ci]);
                }
            }
            out
        })
    });
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone(), bias.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut db = vec![0.0; c];
                for r in 0..rows {
                    for ci in 0..c {
                        db[ci] += g[r * c + ci];
                    }
                }
                vec![Some(g.to_vec()), Some(db)]
            })
        },
    ))
}

/// 2x2 max pooling with stride 2. Requires even spatial extents. Ties pick
/// the first maximum in row-major window order.
pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    expect_rank("max_pool2", input, 3)?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidShape {
            op: "max_pool2",
            shape: input.shape().to_vec(),
            msg: "spatial extents must be even".into(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = vec![0.0; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    input.with_data(|x| {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = Real::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ci;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    data[(oy * ow + ox) * c + ci] = best;
                    argmax[(oy * ow + ox) * c + ci] = best_idx;
                }
            }
        }
    });
    let in_numel = input.numel();
    Ok(Tensor::from_op(
        vec![oh, ow, c],
        data,
        vec![input.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut dx = vec![0.0; in_numel];
                for (gi, &src) in g.iter().zip(&argmax) {
                    dx[src] += gi;
                }
                vec![Some(dx)]
            })
        },
    ))
}

/// 2x nearest-neighbor upsampling: `[H, W, C] -> [2H, 2W, C]`.
pub fn upsample_nearest2(input: &Tensor) -> Result<Tensor> {
    expect_rank("upsample_nearest2", input, 3)?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut data = vec![0.0; oh * ow * c];
    input.with_data(|x| {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((oy / 2) * w + ox / 2) * c;
                data[(oy * ow + ox) * c..(oy * ow + ox + 1) * c].copy_from_slice(&x[src..src + c]);
            }
        }
    });
    Ok(Tensor::from_op(
        vec![oh, ow, c],
        data,
        vec![input.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut dx = vec![0.0; h * w * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src = ((oy / 2) * w + ox / 2) * c;
                        let gbase = (oy * ow + ox) * c;
                        for ci in 0..c {
                            dx[src + ci] += g[gbase + ci];
                        }
                    }
                }
                vec![Some(dx)]
            })
        },
    ))
}

/// Numerically stabilized softmax over the last axis.
pub fn softmax_last(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            op: "softmax_last",
            shape: shape.to_vec(),
            msg: "needs at least one axis".into(),
        });
    }
    let c = shape[shape.len() - 1];
    let rows = logits.numel() / c;
    let finite = logits.with_data(|x| x.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(TensorError::NonFinite { op: "softmax_last" });
    }
    let mut data = vec![0.0; logits.numel()];
    logits.with_data(|x| {
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let mut z = 0.0;
            for (o, &v) in data[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in &mut data[r * c..(r + 1) * c] {
                *o /= z;
            }
        }
    });
    // Backward needs the outputs; clone the values rather than the output
    // tensor to keep the graph acyclic.
    let probs = data.clone();
    Ok(Tensor::from_op(
        shape.to_vec(),
        data,
        vec![logits.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut dx = vec![0.0; probs.len()];
                for r in 0..rows {
                    let p = &probs[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: Real = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                    for ((d, pi), gi) in dx[r * c..(r + 1) * c].iter_mut().zip(p).zip(gr) {
                        *d = pi * (gi - dot);
                    }
                }
                vec![Some(dx)]
            })
        },
    ))
}

/// Select per-pixel probabilities by class index:
/// `[H, W, C] gathered by labels (len H*W) -> [H, W]`.
pub fn gather_class(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    expect_rank("gather_class", probs, 3)?;
    let (h, w, c) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
    if labels.len() != h * w {
        return Err(TensorError::BadArgument {
            op: "gather_class",
            msg: format!("{} labels for {} pixels", labels.len(), h * w),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::BadArgument {
            op: "gather_class",
            msg: format!("label {bad} out of range for {c} channels"),
        });
    }
    let data = probs.with_data(|p| {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| p[i * c + l])
            .collect::<Vec<Real>>()
    });
    let labels_owned = labels.to_vec();
    Ok(Tensor::from_op(vec![h, w], data, vec![probs.clone()], move || {
        Box::new(move |g: &[Real]| {
            let mut dp = vec![0.0; g.len() * c];
            for (i, (&l, gi)) in labels_owned.iter().zip(g).enumerate() {
                dp[i * c + l] = *gi;
            }
            vec![Some(dp)]
        })
    }))
}

/// Batch statistics produced by a train-mode normalization, used by the
/// caller to update its running buffers.
pub struct BatchNormOutput {
    pub output: Tensor,
    pub batch_mean: Vec<Real>,
    pub batch_var: Vec<Real>,
}

/// Train-mode batch normalization over the spatial axes of `[H, W, C]`,
/// using biased per-channel batch statistics. Differentiable w.r.t. the
/// input, gamma, and beta (statistics included in the chain rule).
pub fn batch_norm_train(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: Real) -> Result<BatchNormOutput> {
    expect_rank("batch_norm", input, 3)?;
    let c = input.shape()[2];
    check_affine("batch_norm", gamma, beta, c)?;
    let n = input.numel() / c;

    let (mut mean, mut var) = (vec![0.0; c], vec![0.0; c]);
    input.with_data(|x| {
        for r in 0..n {
            for ci in 0..c {
                mean[ci] += x[r * c + ci];
            }
        }
        for m in &mut mean {
            *m /= n as Real;
        }
        for r in 0..n {
            for ci in 0..c {
                let d = x[r * c + ci] - mean[ci];
                var[ci] += d * d;
            }
        }
        for v in &mut var {
            *v /= n as Real;
        }
    });

    let inv_std: Vec<Real> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let data = input.with_data(|x| {
        gamma.with_data(|gm| {
            beta.with_data(|bt| {
                let mut out = vec![0.0; x.len()];
                for r in 0..n {
                    for ci in 0..c {
                        let xhat = (x[r * c + ci] - mean[ci]) * inv_std[ci];
                        out[r * c + ci] = gm[ci] * xhat + bt[ci];
                    }
                }
                out
            })
        })
    });

    let in_t = input.clone();
    let gamma_t = gamma.clone();
    let mean_b = mean.clone();
    let inv_std_b = inv_std.clone();
    let output = Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone(), gamma.clone(), beta.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                let dx = in_t.with_data(|x| {
                    for r in 0..n {
                        for ci in 0..c {
                            let xhat = (x[r * c + ci] - mean_b[ci]) * inv_std_b[ci];
                            let gv = g[r * c + ci];
                            dgamma[ci] += gv * xhat;
                            dbeta[ci] += gv;
                            sum_g[ci] += gv;
                            sum_gx[ci] += gv * xhat;
                        }
                    }
                    gamma_t.with_data(|gm| {
                        let mut dx = vec![0.0; x.len()];
                        let inv_n = 1.0 / n as Real;
                        for r in 0..n {
                            for ci in 0..c {
                                let xhat = (x[r * c + ci] - mean_b[ci]) * inv_std_b[ci];
                                dx[r * c + ci] = gm[ci]
                                    * inv_std_b[ci]
                                    * (g[r * c + ci] - inv_n * sum_g[ci] - xhat * inv_n * sum_gx[ci]);
                            }
                        }
                        dx
                    })
                });
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            })
        },
    );
    Ok(BatchNormOutput {
        output,
        batch_mean: mean,
        batch_var: var,
    })
}

/// Eval-mode batch normalization against fixed running statistics.
pub fn batch_norm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[Real],
    running_var: &[Real],
    eps: Real,
) -> Result<Tensor> {
    expect_rank("batch_norm", input, 3)?;
    let c = input.shape()[2];
    check_affine("batch_norm", gamma, beta, c)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::BadArgument {
            op: "batch_norm",
            msg: "running statistic length does not match channel count".into(),
        });
    }
    let n = input.numel() / c;
    let inv_std: Vec<Real> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mean = running_mean.to_vec();
    let data = input.with_data(|x| {
        gamma.with_data(|gm| {
            beta.with_data(|bt| {
                let mut out = vec![0.0; x.len()];
                for r in 0..n {
                    for ci in 0..c {
                        out[r * c + ci] = gm[ci] * (x[r * c + ci] - mean[ci]) * inv_std[ci] + bt[ci];
                    }
                }
                out
            })
        })
    });
    let in_t = input.clone();
    let gamma_t = gamma.clone();
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone(), gamma.clone(), beta.clone()],
        move || {
            Box::new(move |g: &[Real]| {
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let dx = in_t.with_data(|x| {
                    gamma_t.with_data(|gm| {
                        let mut dx = vec![0.0; x.len()];
                        for r in 0..n {
                            for ci in 0..c {
                                let xhat = (x[r * c + ci] - mean[ci]) * inv_std[ci];
                                let gv = g[r * c + ci];
                                dgamma[ci] += gv * xhat;
                                dbeta[ci] += gv;
                                dx[r * c + ci] = gv * gm[ci] * inv_std[ci];
                            }
                        }
                        dx
                    })
                });
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            })
        },
    ))
}

fn check_affine(op: &'static str, gamma: &Tensor, beta: &Tensor, c: usize) -> Result<()> {
    for t in [gamma, beta] {
        if t.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![c],
                rhs: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}
