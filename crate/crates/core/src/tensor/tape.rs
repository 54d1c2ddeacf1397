use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vector-Jacobian product of one recorded op: maps the gradient of the op's
/// output to gradients of its inputs, in input order. `None` means the
/// input receives no contribution.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

/// Handle to a value recorded on a [`Tape`]. Handles are ordered by
/// recording time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    is_leaf: bool,
}

/// Define-by-run computation record.
///
/// Every forward pass builds a fresh tape. Inputs always precede the nodes
/// that consume them, so a reverse sweep is a valid topological order.
/// `backward` may run once; a second call fails with
/// [`Error::TapeConsumed`].
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Trainable input: receives a gradient from `backward`.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad: true,
            is_leaf: true,
        })
    }

    /// Input that takes no part in differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad: false,
            is_leaf: true,
        })
    }

    /// Records an op result. The backward closure is dropped when no input
    /// requires a gradient, so constant subgraphs stay off the gradient path.
    pub fn record(&self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.len()));
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
            is_leaf: false,
        })
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Borrowed view of a value; do not hold across another tape call.
    pub fn get(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_ref())
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::InvalidReduction(loss_shape));
        }
        self.consumed.set(true);

        let (mut fns, inputs, leaf, requires, shapes): (Vec<_>, Vec<_>, Vec<_>, Vec<_>, Vec<_>) = {
            let mut nodes = self.nodes.borrow_mut();
            let mut fns = Vec::with_capacity(nodes.len());
            let mut inputs = Vec::with_capacity(nodes.len());
            let mut leaf = Vec::with_capacity(nodes.len());
            let mut requires = Vec::with_capacity(nodes.len());
            let mut shapes = Vec::with_capacity(nodes.len());
            for n in nodes.iter_mut() {
                fns.push(n.backward.take());
                inputs.push(n.inputs.clone());
                leaf.push(n.is_leaf);
                requires.push(n.requires_grad);
                shapes.push(n.value.shape().to_vec());
            }
            (fns, inputs, leaf, requires, shapes)
        };

        let mut grads: Vec<Option<Tensor<T>>> = (0..fns.len()).map(|_| None).collect();
        if requires[loss.0] {
            grads[loss.0] = Some(Tensor::from_parts(loss_shape, vec![T::one()]));
        }
        for id in (0..=loss.0).rev() {
            if leaf[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let Some(f) = fns[id].take() else { continue };
            let input_grads = f(&g);
            debug_assert_eq!(input_grads.len(), inputs[id].len());
            for (&src, ig) in inputs[id].iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !requires[src] {
                    continue;
                }
                debug_assert_eq!(ig.shape(), shapes[src].as_slice(), "gradient shape for node {src}");
                match &mut grads[src] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        // Only leaf gradients survive the sweep.
        for (id, g) in grads.iter_mut().enumerate() {
            if !leaf[id] {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if it was not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf; zeros when the leaf did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::from_parts(
                self.shapes[v.0].clone(),
                vec![T::zero(); self.shapes[v.0].iter().product()],
            ),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::from_parts(
                self.shapes[v.0].clone(),
                vec![T::zero(); self.shapes[v.0].iter().product()],
            ),
        }
    }
}
