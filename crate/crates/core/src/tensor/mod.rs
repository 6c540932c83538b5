//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every value is a node in an acyclic compute graph. Forward evaluation is
//! eager; each op records a backward closure that scatters the incoming
//! gradient into its parents. `backward()` walks the graph once in reverse
//! topological order.
//!
//! Storage is row-major with the last axis fastest. A feature map is a
//! rank-3 tensor (height, width, channels); a token sequence is rank-2
//! (tokens, features). Values are immutable once produced — only leaf
//! parameters are ever mutated, and only between forward passes (the
//! optimizer step and the finite-difference probe in `grad_check`).

mod conv;
mod gradcheck;
mod ops;
mod resize;

pub use gradcheck::{grad_check, grad_check_sampled};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Vec<T>>,
    /// Inputs of the op that produced this node; used for the topological
    /// walk. Every tensor the backward closure writes into must be listed.
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A shared handle to a graph node. Cloning is cheap (reference count).
pub struct Tensor<T: Scalar> {
    inner: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// A leaf node: an input or a parameter. Leaves have no backward op but
    /// do accumulate gradients, so parameters can be updated after
    /// `backward()`.
    pub fn leaf(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length does not match shape {:?}",
            shape
        );
        let n = data.len();
        Tensor {
            inner: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(vec![T::zero(); n]),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape, vec![T::zero(); n])
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(vec![1], vec![v])
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, parents: Vec<Tensor<T>>, backward: BackwardFn<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by an op with output shape {:?}",
            shape
        );
        let n = data.len();
        Tensor {
            inner: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(vec![T::zero(); n]),
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn grad(&self) -> Ref<'_, Vec<T>> {
        self.inner.grad.borrow()
    }

    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    /// Accumulate a gradient contribution into this node.
    pub(crate) fn add_grad(&self, g: &[T]) {
        let mut grad = self.inner.grad.borrow_mut();
        debug_assert_eq!(grad.len(), g.len());
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst = *dst + *src;
        }
    }

    pub fn zero_grad(&self) {
        for v in self.inner.grad.borrow_mut().iter_mut() {
            *v = T::zero();
        }
    }

    /// Mutate leaf data in place (optimizer step, finite-difference probe).
    /// Must not be called on interior nodes or between a forward pass and
    /// its backward pass.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn ptr_eq(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse-mode sweep from a scalar node. Seeds the output gradient
    /// with 1 and accumulates into every reachable node's grad buffer.
    /// Parameter gradients are *accumulated*: callers zero them between
    /// steps, which is what lets per-sample backward passes sum into a
    /// batch gradient.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar loss");
        self.add_grad(&[T::one()]);
        let order = self.topo_order();
        for t in order {
            if let Some(back) = &t.inner.backward {
                let g = t.inner.grad.borrow();
                back(&g);
            }
        }
    }

    /// Reverse topological order (this node first, leaves last).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut post: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        // Iterative postorder DFS over parent edges.
        enum Frame<T: Scalar> {
            Enter(Tensor<T>),
            Exit(Tensor<T>),
        }
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    let ptr = Rc::as_ptr(&t.inner);
                    if !visited.insert(ptr) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.inner.parents {
                        stack.push(Frame::Enter(p.clone()));
                    }
                }
                Frame::Exit(t) => post.push(t),
            }
        }
        post.reverse();
        post
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [a, b] => Ok((*a, *b)),
            s => Err(Error::shape("dims2", "rank-2", format!("{:?}", s))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(Error::shape("dims3", "rank-3", format!("{:?}", s))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            [a, b, c, d] => Ok((*a, *b, *c, *d)),
            s => Err(Error::shape("dims4", "rank-4", format!("{:?}", s))),
        }
    }
}

/// Convenience constructor for a feature map leaf.
pub fn feature_map<T: Scalar>(h: usize, w: usize, c: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::leaf(vec![h, w, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_accumulates_through_shared_node() {
        // y = x*x + x ; dy/dx = 2x + 1
        let x = Tensor::<f64>::leaf(vec![2], vec![3.0, -1.0]);
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        y.backward();
        let g = x.grad();
        assert_eq!(g[0], 7.0);
        assert_eq!(g[1], -1.0);
    }

    #[test]
    fn leaf_grad_zeroing_resets_exactly() {
        let x = Tensor::<f64>::leaf(vec![3], vec![1.0, 2.0, 3.0]);
        let y = x.sum_all();
        y.backward();
        assert!(x.grad().iter().all(|&v| v == 1.0));
        x.zero_grad();
        assert!(x.grad().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[should_panic]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0]);
        x.backward();
    }
}
