//! Elementwise, reduction, and shape operations.

use crate::{Real, Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect()));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            || Box::new(|g: &[Real]| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x - y).collect()));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            || {
                Box::new(|g: &[Real]| {
                    vec![Some(g.to_vec()), Some(g.iter().map(|x| -x).collect())]
                })
            },
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x * y).collect()));
        let lhs = self.clone();
        let rhs = other.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move || {
                Box::new(move |g: &[Real]| {
                    let da = rhs.with_data(|b| g.iter().zip(b).map(|(gi, bi)| gi * bi).collect());
                    let db = lhs.with_data(|a| g.iter().zip(a).map(|(gi, ai)| gi * ai).collect());
                    vec![Some(da), Some(db)]
                })
            },
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("div", self, other)?;
        let data = self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x / y).collect()));
        let lhs = self.clone();
        let rhs = other.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move || {
                Box::new(move |g: &[Real]| {
                    let da = rhs.with_data(|b| g.iter().zip(b).map(|(gi, bi)| gi / bi).collect());
                    let db = lhs.with_data(|a| {
                        rhs.with_data(|b| {
                            g.iter()
                                .zip(a.iter().zip(b))
                                .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                                .collect()
                        })
                    });
                    vec![Some(da), Some(db)]
                })
            },
        ))
    }

    pub fn scale(&self, c: Real) -> Tensor {
        let data = self.with_data(|a| a.iter().map(|x| x * c).collect());
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], || {
            Box::new(move |g: &[Real]| vec![Some(g.iter().map(|x| x * c).collect())])
        })
    }

    pub fn add_scalar(&self, c: Real) -> Tensor {
        let data = self.with_data(|a| a.iter().map(|x| x + c).collect());
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], || {
            Box::new(|g: &[Real]| vec![Some(g.to_vec())])
        })
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(&self) -> Tensor {
        let data: Vec<Real> = self.with_data(|a| a.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect());
        let input = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move || {
            Box::new(move |g: &[Real]| {
                let dx = input.with_data(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, &ai)| if ai > 0.0 { *gi } else { 0.0 })
                        .collect()
                });
                vec![Some(dx)]
            })
        })
    }

    /// ln(max(x, floor)); the clamped region has zero derivative.
    pub fn log_clamped(&self, floor: Real) -> Tensor {
        let data: Vec<Real> = self.with_data(|a| a.iter().map(|&x| x.max(floor).ln()).collect());
        let input = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move || {
            Box::new(move |g: &[Real]| {
                let dx = input.with_data(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, &ai)| if ai > floor { gi / ai } else { 0.0 })
                        .collect()
                });
                vec![Some(dx)]
            })
        })
    }

    pub fn sum(&self) -> Tensor {
        let total: Real = self.with_data(|a| a.iter().sum());
        let numel = self.numel();
        Tensor::from_op(vec![], vec![total], vec![self.clone()], move || {
            Box::new(move |g: &[Real]| vec![Some(vec![g[0]; numel])])
        })
    }

    pub fn mean(&self) -> Tensor {
        let numel = self.numel();
        let total: Real = self.with_data(|a| a.iter().sum());
        Tensor::from_op(vec![], vec![total / numel as Real], vec![self.clone()], move || {
            Box::new(move |g: &[Real]| vec![Some(vec![g[0] / numel as Real; numel])])
        })
    }

    /// Reduce every axis except the last: `[d0, .., dn, C] -> [C]`.
    pub fn sum_keep_last(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "sum_keep_last",
                shape: shape.to_vec(),
                msg: "needs at least one axis".into(),
            });
        }
        let channels = shape[shape.len() - 1];
        let rows = self.numel() / channels;
        let mut out = vec![0.0; channels];
        self.with_data(|a| {
            for r in 0..rows {
                let base = r * channels;
                for c in 0..channels {
                    out[c] += a[base + c];
                }
            }
        });
        Ok(Tensor::from_op(vec![channels], out, vec![self.clone()], move || {
            Box::new(move |g: &[Real]| {
                let mut dx = vec![0.0; rows * channels];
                for r in 0..rows {
                    dx[r * channels..(r + 1) * channels].copy_from_slice(g);
                }
                vec![Some(dx)]
            })
        }))
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let ca = sa[sa.len() - 1];
        let cb = sb[sb.len() - 1];
        let rows = self.numel() / ca;
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let mut data = Vec::with_capacity(rows * (ca + cb));
        self.with_data(|a| {
            other.with_data(|b| {
                for r in 0..rows {
                    data.extend_from_slice(&a[r * ca..(r + 1) * ca]);
                    data.extend_from_slice(&b[r * cb..(r + 1) * cb]);
                }
            })
        });
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            move || {
                Box::new(move |g: &[Real]| {
                    let mut da = vec![0.0; rows * ca];
                    let mut db = vec![0.0; rows * cb];
                    let stride = ca + cb;
                    for r in 0..rows {
                        da[r * ca..(r + 1) * ca].copy_from_slice(&g[r * stride..r * stride + ca]);
                        db[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g[r * stride + ca..(r + 1) * stride]);
                    }
                    vec![Some(da), Some(db)]
                })
            },
        ))
    }
}
