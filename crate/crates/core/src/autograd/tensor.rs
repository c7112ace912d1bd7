use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: receives the output gradient and, per input, whether that
/// input wants a gradient. Returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn FnOnce(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

/// Record of the operation that produced a tensor.
pub struct GraphNode<T: Real> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<&'static str>,
    node: RefCell<Option<GraphNode<T>>>,
    consumed: Cell<bool>,
}

/// Dense row-major array with reverse-mode differentiation.
///
/// Cloning a `Tensor` is cheap and shares storage, like an `Rc`.
pub struct Tensor<T: Real = f32> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.inner.data.borrow();
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad);
        if let Some(op) = self.inner.op {
            d.field("op", &op);
        }
        if data.len() <= 16 {
            d.field("data", &*data);
        }
        d.finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "extents must be positive, got {shape:?}"
        )));
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::InvalidShape(format!("extent overflow in {shape:?}")))?;
    if numel != len {
        return Err(Error::InvalidShape(format!(
            "shape {shape:?} holds {numel} values, data has {len}"
        )));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn build(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Option<&'static str>,
        node: Option<GraphNode<T>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                op,
                node: RefCell::new(node),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Constant (non-differentiable) tensor.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), false, None, None))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), true, None, None))
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![v], Vec::new(), false, None, None)
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_vec(vec![v; n], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// New trainable leaf holding a copy of this tensor's values.
    pub fn to_param(&self) -> Self {
        Self::build(self.to_vec(), self.inner.shape.clone(), true, None, None)
    }

    /// New constant tensor holding a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.inner.shape.clone(), false, None, None)
    }

    /// Result of a differentiable operation. The graph edge is recorded only
    /// when recording is enabled and some input requires a gradient.
    pub fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| GraphNode {
            op,
            inputs,
            backward,
        });
        Self::build(data, shape, requires_grad, Some(op), node)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Name of the producing operation, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.op
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the values. Mutating a tensor that a live graph has
    /// saved for its backward pass invalidates that pass.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> Result<T> {
        let data = self.inner.data.borrow();
        if data.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "item() on tensor of shape {:?}",
                self.inner.shape
            )));
        }
        Ok(data[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.inner.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode pass from a scalar loss. Gradients are added into the
    /// `grad` buffer of every reachable tensor that requires one. The graph
    /// is freed as it is walked; a second call fails with
    /// [`Error::GraphConsumed`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if self.inner.consumed.get() {
            return Err(Error::GraphConsumed);
        }
        if !self.requires_grad() {
            return Err(Error::NoGraph);
        }
        let order = self.topo_order()?;

        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            t.accumulate_grad(&g);
            let node = t.inner.node.borrow_mut().take();
            let Some(node) = node else { continue };
            t.inner.consumed.set(true);
            let needs: Vec<bool> = node.inputs.iter().map(|x| x.requires_grad()).collect();
            let grads = (node.backward)(&g, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len(), "op {}", node.op);
            for (input, grad) in node.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), input.numel(), "op {}", node.op);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(input.id(), grad);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph (inputs before outputs).
    fn topo_order(&self) -> Result<Vec<Tensor<T>>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            if t.inner.consumed.get() {
                return Err(Error::GraphConsumed);
            }
            let children: Vec<Tensor<T>> = match t.inner.node.borrow().as_ref() {
                Some(node) => node
                    .inputs
                    .iter()
                    .filter(|x| x.requires_grad())
                    .cloned()
                    .collect(),
                None => Vec::new(),
            };
            stack.push((t, true));
            for c in children.into_iter().rev() {
                if !visited.contains(&c.id()) {
                    stack.push((c, false));
                }
            }
        }
        Ok(order)
    }
}
