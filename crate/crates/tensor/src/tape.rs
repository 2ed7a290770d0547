use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps the upstream gradient to one optional gradient per parent. The flag
/// slice says which parents actually need one.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a computation for reverse-mode differentiation.
///
/// A tape lives for one forward/backward pass. Leaves created with
/// [`Tape::leaf`] receive gradients; [`Tape::constant`] leaves do not, and any
/// subgraph built only from constants records no backward closures at all.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node { value: Rc::new(value), requires_grad: true, parents: vec![], backward: None })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node { value: Rc::new(value), requires_grad: false, parents: vec![], backward: None })
    }

    pub fn input(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        if requires_grad {
            self.leaf(value)
        } else {
            self.constant(value)
        }
    }

    /// Records an operation. The closure is dropped when no parent needs a gradient.
    pub fn op<F>(&self, value: Rc<Tensor<T>>, parents: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let backward: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push(Node { value, requires_grad, parents: ids, backward })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Backpropagates from `root`, seeding it with ones, and returns the
    /// gradients of every gradient-requiring leaf reached.
    pub fn backward(&self, root: Var<'_, T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor<T>>> = (0..=root.id).map(|_| None).collect();
        let mut out = HashMap::new();
        if !nodes[root.id].requires_grad {
            return Grads { by_id: out };
        }
        pending[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));
        for id in (0..=root.id).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                None => {
                    if node.requires_grad {
                        out.insert(id, g);
                    }
                }
                Some(bw) => {
                    let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                    let grads = bw(&g, &needs);
                    debug_assert_eq!(grads.len(), node.parents.len());
                    for ((&p, gp), need) in node.parents.iter().zip(grads).zip(needs) {
                        let Some(gp) = gp else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(gp.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                        match &mut pending[p] {
                            Some(acc) => acc.add_assign(&gp),
                            slot => *slot = Some(gp),
                        }
                    }
                }
            }
        }
        Grads { by_id: out }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    by_id: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_id.get(&v.id)
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.by_id.remove(&v.id)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.tape.nodes.borrow()[self.id].value.dim(i)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on non-scalar {:?}", v.shape());
        v.data()[0]
    }
}
