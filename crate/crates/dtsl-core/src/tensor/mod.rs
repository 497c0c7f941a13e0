//! Dense N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns an append-only arena of nodes; a [`Tensor`] is a cheap
//! handle into that arena. Every primitive operation records which nodes it
//! read, so [`Tensor::backward`] can replay the tape in reverse and
//! accumulate analytic gradients. Node ids are assigned in creation order,
//! which makes the arena a topological order by construction: each node's
//! inputs always precede it.
//!
//! Tensors are immutable after construction except for gradient buffers.
//! A tape and its tensors are confined to one thread (`Rc`/`RefCell`);
//! independent tapes may live on different threads.

mod autograd;
mod conv;
mod ops;

pub mod gradcheck;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub(crate) use conv::ConvGeom;

/// Errors from tensor construction and the primitive operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Binary op with incompatible operand shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Shape does not satisfy an op's structural requirements.
    InvalidShape { op: &'static str, detail: String },
    /// Data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// Operands live on different tapes.
    TapeMismatch { op: &'static str },
    /// Axis out of range for the tensor rank.
    InvalidAxis { axis: usize, rank: usize },
    /// Non-finite input where the op requires finite values.
    NonFinite { op: &'static str },
    /// Logarithm of a non-positive value (clamp first).
    LogDomain { min_value: f64 },
    /// Division by an exact zero element or scalar.
    DivByZero { op: &'static str },
    /// Convolution geometry does not produce an integral output size.
    ConvGeometry { detail: String },
    /// backward() called on a non-scalar tensor.
    NonScalarLoss { numel: usize },
    /// Class index out of range in a gather.
    ClassOutOfRange { index: usize, classes: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            TensorError::InvalidShape { op, detail } => write!(f, "{op}: {detail}"),
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::TapeMismatch { op } => {
                write!(f, "{op}: operands belong to different tapes")
            }
            TensorError::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite input"),
            TensorError::LogDomain { min_value } => {
                write!(f, "log of non-positive value {min_value} (clamp first)")
            }
            TensorError::DivByZero { op } => write!(f, "{op}: division by zero"),
            TensorError::ConvGeometry { detail } => write!(f, "conv2d: {detail}"),
            TensorError::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            TensorError::ClassOutOfRange { index, classes } => {
                write!(f, "class index {index} out of range for {classes} classes")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub(crate) type TResult<T> = std::result::Result<T, TensorError>;

/// A recorded primitive operation. Parent node ids point backwards in the
/// arena; payloads that backward needs (pool argmaxes, gather indices) are
/// kept in `Rc` so replay never clones them.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    DivScalar(usize, f64),
    Exp(usize),
    Ln(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    AddChannelBias {
        input: usize,
        bias: usize,
    },
    MaxPool2 {
        input: usize,
        argmax: Rc<Vec<u32>>,
    },
    UpsampleNearest2(usize),
    ConcatChannels(usize, usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    GatherClass {
        input: usize,
        labels: Rc<Vec<u32>>,
    },
    SumOverClasses(usize),
    SumPerClass(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    /// Leaf flag: the caller asked for a gradient on this tensor.
    pub requires_grad: bool,
    /// Transitive flag: some ancestor leaf requires a gradient.
    pub needs_grad: bool,
    pub op: Op,
}

#[derive(Debug, Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Append-only record of primitive operations; owner of all node storage.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Create a leaf tensor from raw row-major data.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> TResult<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(self.push(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad,
            needs_grad: requires_grad,
            op: Op::Leaf,
        }))
    }

    /// Leaf with `requires_grad = false`.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> TResult<Tensor> {
        self.leaf(shape, data, false)
    }

    /// Rank-0 constant.
    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(&[], vec![v], false)
            .expect("scalar leaf cannot fail")
    }

    pub(crate) fn push(&self, node: Node) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(node);
        Tensor {
            tape: Rc::clone(&self.inner),
            id,
        }
    }
}

/// Handle to one node of a [`Tape`]. Cloning is cheap and refers to the
/// same underlying value.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Rc<RefCell<TapeInner>>,
    pub(crate) id: usize,
}

impl Tensor {
    /// The tape this tensor lives on.
    pub fn tape(&self) -> Tape {
        Tape {
            inner: Rc::clone(&self.tape),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.borrow().nodes[self.id].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].requires_grad
    }

    /// Copy the forward value out.
    pub fn data(&self) -> Vec<f64> {
        self.tape.borrow().nodes[self.id].data.clone()
    }

    /// Read the forward value without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.borrow().nodes[self.id].data)
    }

    /// The value of a scalar (single-element) tensor.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.tape.borrow();
        let node = &inner.nodes[self.id];
        assert_eq!(node.data.len(), 1, "scalar_value on non-scalar tensor");
        node.data[0]
    }

    /// Copy the accumulated gradient out, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.borrow().nodes[self.id].grad.clone()
    }

    /// New leaf with the same value, cut off from the graph. No gradient
    /// flows from uses of the detached tensor back into this one.
    pub fn detach(&self) -> Tensor {
        let (shape, data) = {
            let inner = self.tape.borrow();
            let node = &inner.nodes[self.id];
            (node.shape.clone(), node.data.clone())
        };
        self.tape().constant(&shape, data).expect("detach re-leaf")
    }

    pub(crate) fn check_same_tape(&self, other: &Tensor, op: &'static str) -> TResult<()> {
        if Rc::ptr_eq(&self.tape, &other.tape) {
            Ok(())
        } else {
            Err(TensorError::TapeMismatch { op })
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.tape.borrow();
        let node = &inner.nodes[self.id];
        write!(f, "Tensor(id={}, shape={:?}", self.id, node.shape)?;
        if node.data.len() <= 8 {
            write!(f, ", data={:?}", node.data)?;
        }
        write!(f, ")")
    }
}

pub(crate) fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_validates_data_length() {
        let tape = Tape::new();
        let err = tape.leaf(&[2, 3], vec![0.0; 5], false).unwrap_err();
        assert_eq!(
            err,
            TensorError::DataLength {
                expected: 6,
                got: 5
            }
        );
    }

    #[test]
    fn rank_zero_scalar_has_one_element() {
        let tape = Tape::new();
        let s = tape.scalar(2.5);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.shape(), Vec::<usize>::new());
        assert_eq!(s.scalar_value(), 2.5);
    }

    #[test]
    fn detach_blocks_gradient_upstream() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let d = a.detach();
        assert!(!d.requires_grad());
        let loss = d.mul(&d).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert!(a.grad().is_none(), "gradient leaked through detach");
    }

    #[test]
    fn tape_mismatch_is_reported() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(&[2], vec![1.0, 2.0], false).unwrap();
        let b = t2.leaf(&[2], vec![3.0, 4.0], false).unwrap();
        assert!(matches!(
            a.add(&b),
            Err(TensorError::TapeMismatch { op: "add" })
        ));
    }
}
