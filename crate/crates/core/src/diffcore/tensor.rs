use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::DiffError;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with tape recording disabled on this thread.
///
/// Tensors produced inside the closure are constants, whatever their inputs.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) retain: Cell<bool>,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) op: Option<Op>,
}

/// Dense row-major `f64` array that records the operations applied to it.
///
/// Cloning is cheap: clones share the same node.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            retain: Cell::new(false),
            grad: RefCell::new(None),
            op,
        }))
    }

    /// Constant tensor. Panics if `data.len()` does not match `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Self::try_new(data, shape).expect("tensor data does not match shape")
    }

    pub fn try_new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, DiffError> {
        if data.len() != numel(shape) {
            return Err(DiffError::DataLength { len: data.len(), shape: shape.to_vec() });
        }
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(data.len(), numel(shape), "param data does not match shape {shape:?}");
        Self::from_parts(data, shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::from_parts(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::from_parts(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Self::from_parts(vec![v; numel(shape)], shape.to_vec(), false, None)
    }

    /// Rows of equal length stacked into a `[rows, cols]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_parts(data, vec![rows.len(), cols], false, None)
    }

    /// Result of an operation; records `op` only while recording is on and an input needs grad.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        let track = grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::from_parts(data, shape, true, Some(op))
        } else {
            Self::from_parts(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Accumulated gradient, if a backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn set_grad(&self, g: Vec<f64>) {
        assert_eq!(g.len(), self.numel(), "gradient length mismatch");
        *self.0.grad.borrow_mut() = Some(g);
    }

    /// Keep the gradient of this non-leaf tensor after backward.
    pub fn retain_grad(&self) {
        self.0.retain.set(true);
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Same values as a fresh trainable leaf.
    pub fn detach_leaf(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.ndim(), 2, "row() needs a matrix, got {:?}", self.shape());
        let cols = self.0.shape[1];
        &self.0.data[i * cols..(i + 1) * cols]
    }

    /// Backpropagates from this scalar, adding `d self / d t` into the grad of every
    /// reachable leaf `t` (and every non-leaf marked with `retain_grad`).
    pub fn backward(&self) -> Result<(), DiffError> {
        if self.numel() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape().to_vec()));
        }
        self.backward_with(vec![1.0])
    }

    /// Backpropagates an explicit upstream gradient of this tensor's shape.
    pub fn backward_with(&self, seed: Vec<f64>) -> Result<(), DiffError> {
        if seed.len() != self.numel() {
            return Err(DiffError::DataLength { len: seed.len(), shape: self.shape().to_vec() });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), seed);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else { continue };
            if let Some(op) = &t.0.op {
                op.backward(t, &g, &mut |input: &Tensor, contrib: Vec<f64>| {
                    if !input.requires_grad() {
                        return;
                    }
                    match grads.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                        None => {
                            grads.insert(input.id(), contrib);
                        }
                    }
                });
            }
            if t.is_leaf() || t.0.retain.get() {
                let mut slot = t.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Nodes reachable from `root` through grad-requiring edges, inputs before outputs.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    // (tensor, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = &t.0.op {
            for input in op.inputs().into_iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}
