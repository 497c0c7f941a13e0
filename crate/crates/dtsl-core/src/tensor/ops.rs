//! Forward implementations of the primitive operations.
//!
//! Each op computes its value eagerly, then records a node whose `Op` carries
//! the parent ids (and any payload backward will need). `needs_grad` is the
//! OR of the parents' flags, so untracked subgraphs cost nothing at backward.

use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::{product, Node, Op, TResult, Tensor, TensorError};

impl Tensor {
    fn node_from(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        needs_grad: bool,
        op: Op,
    ) -> Tensor {
        self.tape().push(Node {
            shape,
            data,
            grad: None,
            requires_grad: false,
            needs_grad,
            op,
        })
    }

    fn needs_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].needs_grad
    }

    fn binary_elementwise(
        &self,
        rhs: &Tensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make_op: impl FnOnce(usize, usize) -> Op,
    ) -> TResult<Tensor> {
        self.check_same_tape(rhs, op_name)?;
        let (shape, data) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            if a.shape != b.shape {
                return Err(TensorError::ShapeMismatch {
                    op: op_name,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let data: Vec<f64> = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (a.shape.clone(), data)
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.node_from(shape, data, needs, make_op(self.id, rhs.id)))
    }

    fn unary_elementwise(
        &self,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Tensor {
        let (shape, data) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|&x| f(x)).collect())
        };
        self.node_from(shape, data, self.needs_grad(), op)
    }

    pub fn add(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_elementwise(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_elementwise(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.binary_elementwise(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    /// Elementwise division; any exact-zero divisor element is an error.
    pub fn div(&self, rhs: &Tensor) -> TResult<Tensor> {
        {
            let inner = self.tape.borrow();
            if inner.nodes[rhs.id].data.iter().any(|&v| v == 0.0) {
                return Err(TensorError::DivByZero { op: "div" });
            }
        }
        self.binary_elementwise(rhs, "div", |a, b| a / b, Op::Div)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary_elementwise(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary_elementwise(|x| x * c, Op::MulScalar(self.id, c))
    }

    pub fn div_scalar(&self, c: f64) -> TResult<Tensor> {
        if c == 0.0 {
            return Err(TensorError::DivByZero { op: "div_scalar" });
        }
        Ok(self.unary_elementwise(|x| x / c, Op::DivScalar(self.id, c)))
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary_elementwise(f64::exp, Op::Exp(self.id))
    }

    /// Natural logarithm. Errors on non-positive input; clamp first.
    pub fn ln(&self) -> TResult<Tensor> {
        {
            let inner = self.tape.borrow();
            let min = inner.nodes[self.id]
                .data
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min <= 0.0 {
                return Err(TensorError::LogDomain { min_value: min });
            }
        }
        Ok(self.unary_elementwise(f64::ln, Op::Ln(self.id)))
    }

    pub fn relu(&self) -> Tensor {
        self.unary_elementwise(|x| x.max(0.0), Op::Relu(self.id))
    }

    /// Elementwise max(x, c). Standard guard before `ln`.
    pub fn clampmin(&self, c: f64) -> Tensor {
        self.unary_elementwise(move |x| x.max(c), Op::ClampMin(self.id, c))
    }

    /// 2D cross-correlation of `self` [B,Cin,H,W] with `kernel`
    /// [Cout,Cin,kh,kw]. Output is [B,Cout,H',W'] with
    /// H' = (H + 2*padding - kh)/stride + 1.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> TResult<Tensor> {
        self.check_same_tape(kernel, "conv2d")?;
        let (geom, data) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            let k = &inner.nodes[kernel.id];
            let geom = ConvGeom::resolve(&x.shape, &k.shape, stride, padding)?;
            let mut out = vec![0.0; product(&geom.output_shape())];
            conv::forward(&geom, &x.data, &k.data, &mut out);
            (geom, out)
        };
        let needs = self.needs_grad() || kernel.needs_grad();
        Ok(self.node_from(
            geom.output_shape(),
            data,
            needs,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
            },
        ))
    }

    /// Add a per-channel bias [C] to a [B,C,H,W] tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> TResult<Tensor> {
        self.check_same_tape(bias, "add_channel_bias")?;
        let (shape, data) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            let b = &inner.nodes[bias.id];
            if x.shape.len() != 4 || b.shape.len() != 1 || b.shape[0] != x.shape[1] {
                return Err(TensorError::ShapeMismatch {
                    op: "add_channel_bias",
                    lhs: x.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (batch, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
            let mut out = x.data.clone();
            for bi in 0..batch {
                for ci in 0..c {
                    let bv = b.data[ci];
                    for v in &mut out[(bi * c + ci) * hw..][..hw] {
                        *v += bv;
                    }
                }
            }
            (x.shape.clone(), out)
        };
        let needs = self.needs_grad() || bias.needs_grad();
        Ok(self.node_from(
            shape,
            data,
            needs,
            Op::AddChannelBias {
                input: self.id,
                bias: bias.id,
            },
        ))
    }

    /// 2x2 max pooling with stride 2 on a [B,C,H,W] tensor with even H, W.
    /// Ties resolve to the first element in scan order.
    pub fn maxpool2(&self) -> TResult<Tensor> {
        let (shape, data, argmax) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if x.shape.len() != 4 || x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0 {
                return Err(TensorError::InvalidShape {
                    op: "maxpool2",
                    detail: format!("need [B,C,even,even], got {:?}", x.shape),
                });
            }
            let (batch, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(batch * c * oh * ow);
            let mut argmax = Vec::with_capacity(batch * c * oh * ow);
            for p in 0..batch * c {
                let plane = &x.data[p * h * w..][..h * w];
                let base = (p * h * w) as u32;
                for i in 0..oh {
                    for j in 0..ow {
                        let idx = [
                            (2 * i) * w + 2 * j,
                            (2 * i) * w + 2 * j + 1,
                            (2 * i + 1) * w + 2 * j,
                            (2 * i + 1) * w + 2 * j + 1,
                        ];
                        let mut best = idx[0];
                        for &k in &idx[1..] {
                            if plane[k] > plane[best] {
                                best = k;
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(base + best as u32);
                    }
                }
            }
            (vec![batch, c, oh, ow], out, argmax)
        };
        let needs = self.needs_grad();
        Ok(self.node_from(
            shape,
            data,
            needs,
            Op::MaxPool2 {
                input: self.id,
                argmax: Rc::new(argmax),
            },
        ))
    }

    /// Nearest-neighbor 2x upsampling of a [B,C,H,W] tensor.
    pub fn upsample_nearest2(&self) -> TResult<Tensor> {
        let (shape, data) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if x.shape.len() != 4 {
                return Err(TensorError::InvalidShape {
                    op: "upsample_nearest2",
                    detail: format!("need [B,C,H,W], got {:?}", x.shape),
                });
            }
            let (batch, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let mut out = vec![0.0; batch * c * 4 * h * w];
            for p in 0..batch * c {
                let plane = &x.data[p * h * w..][..h * w];
                let dst = &mut out[p * 4 * h * w..][..4 * h * w];
                for i in 0..h {
                    for j in 0..w {
                        let v = plane[i * w + j];
                        dst[(2 * i) * 2 * w + 2 * j] = v;
                        dst[(2 * i) * 2 * w + 2 * j + 1] = v;
                        dst[(2 * i + 1) * 2 * w + 2 * j] = v;
                        dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
                    }
                }
            }
            (vec![batch, c, 2 * h, 2 * w], out)
        };
        Ok(self.node_from(shape, data, self.needs_grad(), Op::UpsampleNearest2(self.id)))
    }

    /// Concatenate two [B,C,H,W] tensors along the channel axis.
    pub fn concat_channels(&self, rhs: &Tensor) -> TResult<Tensor> {
        self.check_same_tape(rhs, "concat_channels")?;
        let (shape, data) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            let ok = a.shape.len() == 4
                && b.shape.len() == 4
                && a.shape[0] == b.shape[0]
                && a.shape[2] == b.shape[2]
                && a.shape[3] == b.shape[3];
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (batch, c1, c2) = (a.shape[0], a.shape[1], b.shape[1]);
            let hw = a.shape[2] * a.shape[3];
            let mut out = Vec::with_capacity(batch * (c1 + c2) * hw);
            for bi in 0..batch {
                out.extend_from_slice(&a.data[bi * c1 * hw..][..c1 * hw]);
                out.extend_from_slice(&b.data[bi * c2 * hw..][..c2 * hw]);
            }
            (
                vec![batch, c1 + c2, a.shape[2], a.shape[3]],
                out,
            )
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.node_from(shape, data, needs, Op::ConcatChannels(self.id, rhs.id)))
    }

    /// Softmax along `axis`, computed with max-subtraction for stability.
    /// Errors on non-finite input.
    pub fn softmax(&self, axis: usize) -> TResult<Tensor> {
        let (shape, data) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if axis >= x.shape.len() {
                return Err(TensorError::InvalidAxis {
                    axis,
                    rank: x.shape.len(),
                });
            }
            if x.data.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "softmax" });
            }
            let mut out = x.data.clone();
            softmax_lanes(&mut out, &x.shape, axis);
            (x.shape.clone(), out)
        };
        Ok(self.node_from(
            shape,
            data,
            self.needs_grad(),
            Op::Softmax {
                input: self.id,
                axis,
            },
        ))
    }

    /// Select one class channel per pixel: from [B,K,H,W] and per-pixel class
    /// indices (length B*H*W, row-major), produce [B,H,W].
    pub fn gather_class(&self, labels: &[usize]) -> TResult<Tensor> {
        let (shape, data, idx) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if x.shape.len() != 4 {
                return Err(TensorError::InvalidShape {
                    op: "gather_class",
                    detail: format!("need [B,K,H,W], got {:?}", x.shape),
                });
            }
            let (batch, k, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
            if labels.len() != batch * hw {
                return Err(TensorError::InvalidShape {
                    op: "gather_class",
                    detail: format!(
                        "label count {} does not match {} pixels",
                        labels.len(),
                        batch * hw
                    ),
                });
            }
            let mut out = Vec::with_capacity(batch * hw);
            let mut idx = Vec::with_capacity(batch * hw);
            for bi in 0..batch {
                for px in 0..hw {
                    let cls = labels[bi * hw + px];
                    if cls >= k {
                        return Err(TensorError::ClassOutOfRange {
                            index: cls,
                            classes: k,
                        });
                    }
                    let lin = (bi * k + cls) * hw + px;
                    out.push(x.data[lin]);
                    idx.push(lin as u32);
                }
            }
            (
                vec![batch, x.shape[2], x.shape[3]],
                out,
                idx,
            )
        };
        Ok(self.node_from(
            shape,
            data,
            self.needs_grad(),
            Op::GatherClass {
                input: self.id,
                labels: Rc::new(idx),
            },
        ))
    }

    /// Reduce [B,K,H,W] over the class axis to [B,H,W].
    pub fn sum_over_classes(&self) -> TResult<Tensor> {
        let (shape, data) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if x.shape.len() != 4 {
                return Err(TensorError::InvalidShape {
                    op: "sum_over_classes",
                    detail: format!("need [B,K,H,W], got {:?}", x.shape),
                });
            }
            let (batch, k, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
            let mut out = vec![0.0; batch * hw];
            for bi in 0..batch {
                for ki in 0..k {
                    let src = &x.data[(bi * k + ki) * hw..][..hw];
                    let dst = &mut out[bi * hw..][..hw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            (vec![batch, x.shape[2], x.shape[3]], out)
        };
        Ok(self.node_from(shape, data, self.needs_grad(), Op::SumOverClasses(self.id)))
    }

    /// Reduce [B,K,H,W] over batch and space to a per-class vector [K].
    pub fn sum_per_class(&self) -> TResult<Tensor> {
        let (data, k) = {
            let inner = self.tape.borrow();
            let x = &inner.nodes[self.id];
            if x.shape.len() != 4 {
                return Err(TensorError::InvalidShape {
                    op: "sum_per_class",
                    detail: format!("need [B,K,H,W], got {:?}", x.shape),
                });
            }
            let (batch, k, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
            let mut out = vec![0.0; k];
            for bi in 0..batch {
                for ki in 0..k {
                    out[ki] += x.data[(bi * k + ki) * hw..][..hw].iter().sum::<f64>();
                }
            }
            (out, k)
        };
        Ok(self.node_from(vec![k], data, self.needs_grad(), Op::SumPerClass(self.id)))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> TResult<Tensor> {
        let total = {
            let inner = self.tape.borrow();
            inner.nodes[self.id].data.iter().sum::<f64>()
        };
        Ok(self.node_from(vec![], vec![total], self.needs_grad(), Op::Sum(self.id)))
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> TResult<Tensor> {
        let (total, n) = {
            let inner = self.tape.borrow();
            let d = &inner.nodes[self.id].data;
            (d.iter().sum::<f64>(), d.len())
        };
        Ok(self.node_from(
            vec![],
            vec![total / n as f64],
            self.needs_grad(),
            Op::Mean(self.id),
        ))
    }
}

/// In-place softmax over the given axis of a row-major buffer.
fn softmax_lanes(data: &mut [f64], shape: &[usize], axis: usize) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..len {
                max = max.max(data[base + a * inner]);
            }
            let mut sum = 0.0;
            for a in 0..len {
                let e = (data[base + a * inner] - max).exp();
                data[base + a * inner] = e;
                sum += e;
            }
            for a in 0..len {
                data[base + a * inner] /= sum;
            }
        }
    }
}
