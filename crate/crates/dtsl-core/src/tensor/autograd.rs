//! Reverse-mode gradient accumulation.
//!
//! `backward` seeds the scalar loss with 1.0 and walks the arena from the
//! loss id down to 0. Node ids are topological, so every node's gradient is
//! complete before its own rule runs. Gradients accumulate; run one backward
//! per tape (training builds a fresh tape every iteration).

use super::conv;
use super::{Node, Op, TResult, Tensor, TensorError};

impl Tensor {
    /// Populate gradients of every grad-requiring tensor that contributed to
    /// this scalar. Errors if the tensor is not a scalar.
    pub fn backward(&self) -> TResult<()> {
        let mut inner = self.tape.borrow_mut();
        let nodes = &mut inner.nodes;
        let numel = nodes[self.id].data.len();
        if numel != 1 {
            return Err(TensorError::NonScalarLoss { numel });
        }
        if !nodes[self.id].needs_grad {
            return Ok(());
        }
        accumulate(nodes, self.id, None, &[1.0]);

        for id in (0..=self.id).rev() {
            if !nodes[id].needs_grad || nodes[id].grad.is_none() {
                continue;
            }
            // Take the gradient out so parent nodes can be borrowed freely.
            let g = nodes[id].grad.take().expect("checked above");
            let op = nodes[id].op.clone();
            step(nodes, id, &op, &g);
            nodes[id].grad = Some(g);
        }
        Ok(())
    }
}

/// Add `contrib` into the gradient buffer of `target`, allocating on first
/// touch. Skips nodes outside the differentiable subgraph.
fn accumulate(nodes: &mut [Node], target: usize, scale: Option<f64>, contrib: &[f64]) {
    if !nodes[target].needs_grad {
        return;
    }
    let node = &mut nodes[target];
    let grad = node
        .grad
        .get_or_insert_with(|| vec![0.0; node.data.len()]);
    debug_assert_eq!(grad.len(), contrib.len());
    match scale {
        None => {
            for (g, c) in grad.iter_mut().zip(contrib) {
                *g += c;
            }
        }
        Some(s) => {
            for (g, c) in grad.iter_mut().zip(contrib) {
                *g += s * c;
            }
        }
    }
}

fn step(nodes: &mut [Node], id: usize, op: &Op, g: &[f64]) {
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, a, None, g);
            accumulate(nodes, b, None, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, a, None, g);
            accumulate(nodes, b, Some(-1.0), g);
        }
        Op::Mul(a, b) => {
            if nodes[a].needs_grad {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&nodes[b].data)
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                accumulate(nodes, a, None, &da);
            }
            if nodes[b].needs_grad {
                let db: Vec<f64> = g
                    .iter()
                    .zip(&nodes[a].data)
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                accumulate(nodes, b, None, &db);
            }
        }
        Op::Div(a, b) => {
            if nodes[a].needs_grad {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&nodes[b].data)
                    .map(|(&gv, &bv)| gv / bv)
                    .collect();
                accumulate(nodes, a, None, &da);
            }
            if nodes[b].needs_grad {
                let db: Vec<f64> = g
                    .iter()
                    .zip(nodes[a].data.iter().zip(&nodes[b].data))
                    .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                    .collect();
                accumulate(nodes, b, None, &db);
            }
        }
        Op::AddScalar(a) => accumulate(nodes, a, None, g),
        Op::MulScalar(a, c) => accumulate(nodes, a, Some(c), g),
        Op::DivScalar(a, c) => accumulate(nodes, a, Some(1.0 / c), g),
        Op::Exp(a) => {
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[id].data)
                .map(|(&gv, &yv)| gv * yv)
                .collect();
            accumulate(nodes, a, None, &da);
        }
        Op::Ln(a) => {
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[a].data)
                .map(|(&gv, &xv)| gv / xv)
                .collect();
            accumulate(nodes, a, None, &da);
        }
        Op::Relu(a) => {
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[a].data)
                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(nodes, a, None, &da);
        }
        Op::ClampMin(a, c) => {
            // Pass-through on the unclamped side, matching max(x, c).
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[a].data)
                .map(|(&gv, &xv)| if xv >= c { gv } else { 0.0 })
                .collect();
            accumulate(nodes, a, None, &da);
        }
        Op::Conv2d {
            input,
            kernel,
            ref geom,
        } => {
            if nodes[input].needs_grad {
                let mut d_in = vec![0.0; nodes[input].data.len()];
                conv::backward_input(geom, &nodes[kernel].data, g, &mut d_in);
                accumulate(nodes, input, None, &d_in);
            }
            if nodes[kernel].needs_grad {
                let mut d_k = vec![0.0; nodes[kernel].data.len()];
                conv::backward_kernel(geom, &nodes[input].data, g, &mut d_k);
                accumulate(nodes, kernel, None, &d_k);
            }
        }
        Op::AddChannelBias { input, bias } => {
            accumulate(nodes, input, None, g);
            if nodes[bias].needs_grad {
                let shape = &nodes[id].shape;
                let (batch, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut d_b = vec![0.0; c];
                for bi in 0..batch {
                    for ci in 0..c {
                        d_b[ci] += g[(bi * c + ci) * hw..][..hw].iter().sum::<f64>();
                    }
                }
                accumulate(nodes, bias, None, &d_b);
            }
        }
        Op::MaxPool2 { input, ref argmax } => {
            let mut d_in = vec![0.0; nodes[input].data.len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                d_in[src as usize] += gv;
            }
            accumulate(nodes, input, None, &d_in);
        }
        Op::UpsampleNearest2(a) => {
            let shape = &nodes[a].shape;
            let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
            let mut d_in = vec![0.0; nodes[a].data.len()];
            for p in 0..planes {
                let gp = &g[p * 4 * h * w..][..4 * h * w];
                let dp = &mut d_in[p * h * w..][..h * w];
                for i in 0..h {
                    for j in 0..w {
                        dp[i * w + j] = gp[(2 * i) * 2 * w + 2 * j]
                            + gp[(2 * i) * 2 * w + 2 * j + 1]
                            + gp[(2 * i + 1) * 2 * w + 2 * j]
                            + gp[(2 * i + 1) * 2 * w + 2 * j + 1];
                    }
                }
            }
            accumulate(nodes, a, None, &d_in);
        }
        Op::ConcatChannels(a, b) => {
            let (batch, hw) = {
                let s = &nodes[id].shape;
                (s[0], s[2] * s[3])
            };
            let c1 = nodes[a].shape[1];
            let c2 = nodes[b].shape[1];
            if nodes[a].needs_grad {
                let mut da = vec![0.0; nodes[a].data.len()];
                for bi in 0..batch {
                    da[bi * c1 * hw..][..c1 * hw]
                        .copy_from_slice(&g[bi * (c1 + c2) * hw..][..c1 * hw]);
                }
                accumulate(nodes, a, None, &da);
            }
            if nodes[b].needs_grad {
                let mut db = vec![0.0; nodes[b].data.len()];
                for bi in 0..batch {
                    db[bi * c2 * hw..][..c2 * hw]
                        .copy_from_slice(&g[(bi * (c1 + c2) + c1) * hw..][..c2 * hw]);
                }
                accumulate(nodes, b, None, &db);
            }
        }
        Op::Softmax { input, axis } => {
            // dx = y * (dy - sum_k dy_k y_k) along the softmax axis
            let y = &nodes[id].data;
            let shape = &nodes[id].shape;
            let len = shape[axis];
            let inner_sz: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            let mut d_in = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner_sz {
                    let base = o * len * inner_sz + i;
                    let mut dot = 0.0;
                    for a in 0..len {
                        let k = base + a * inner_sz;
                        dot += g[k] * y[k];
                    }
                    for a in 0..len {
                        let k = base + a * inner_sz;
                        d_in[k] = y[k] * (g[k] - dot);
                    }
                }
            }
            accumulate(nodes, input, None, &d_in);
        }
        Op::GatherClass { input, ref labels } => {
            let mut d_in = vec![0.0; nodes[input].data.len()];
            for (&lin, &gv) in labels.iter().zip(g) {
                d_in[lin as usize] += gv;
            }
            accumulate(nodes, input, None, &d_in);
        }
        Op::SumOverClasses(a) => {
            let shape = &nodes[a].shape;
            let (batch, k, hw) = (shape[0], shape[1], shape[2] * shape[3]);
            let mut d_in = vec![0.0; nodes[a].data.len()];
            for bi in 0..batch {
                let gp = &g[bi * hw..][..hw];
                for ki in 0..k {
                    d_in[(bi * k + ki) * hw..][..hw].copy_from_slice(gp);
                }
            }
            accumulate(nodes, a, None, &d_in);
        }
        Op::SumPerClass(a) => {
            let shape = &nodes[a].shape;
            let (batch, k, hw) = (shape[0], shape[1], shape[2] * shape[3]);
            let mut d_in = vec![0.0; nodes[a].data.len()];
            for bi in 0..batch {
                for ki in 0..k {
                    let gv = g[ki];
                    for v in &mut d_in[(bi * k + ki) * hw..][..hw] {
                        *v = gv;
                    }
                }
            }
            accumulate(nodes, a, None, &d_in);
        }
        Op::Sum(a) => {
            let n = nodes[a].data.len();
            let contrib = vec![g[0]; n];
            accumulate(nodes, a, None, &contrib);
        }
        Op::Mean(a) => {
            let n = nodes[a].data.len();
            let contrib = vec![g[0] / n as f64; n];
            accumulate(nodes, a, None, &contrib);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![5.0, -2.0, 0.5], true).unwrap();
        let loss = a.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_backward_is_2x() {
        let tape = Tape::new();
        let a = tape.leaf(&[2], vec![2.0, 3.0], true).unwrap();
        let loss = a.mul(&a).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.leaf(&[1], vec![2.0], true).unwrap();
        let b = tape.leaf(&[1], vec![3.0], true).unwrap();
        let loss = a.mul(&b).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![3.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let a = tape.leaf(&[2], vec![1.0, 2.0], true).unwrap();
        assert!(a.backward().is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(a*2) + sum(a*3) -> d_a = 5 everywhere
        let tape = Tape::new();
        let a = tape.leaf(&[2], vec![1.0, 1.0], true).unwrap();
        let l1 = a.mul_scalar(2.0).sum().unwrap();
        let l2 = a.mul_scalar(3.0).sum().unwrap();
        let loss = l1.add(&l2).unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn untracked_graph_gets_no_grads() {
        let tape = Tape::new();
        let a = tape.leaf(&[2], vec![1.0, 2.0], false).unwrap();
        let loss = a.mul(&a).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert!(a.grad().is_none());
        assert!(loss.grad().is_none());
    }
}
