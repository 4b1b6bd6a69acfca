//! Reverse-mode automatic differentiation on dynamic-rank f64 tensors.
//!
//! A [`Tape`] records each operation as a node holding its value and a
//! backward closure; [`Tape::backward`] walks the nodes in reverse creation
//! order (a valid topological order for a define-by-run graph) and
//! accumulates gradients. With gradients disabled the same ops run
//! value-only, which is how evaluation-mode forward passes execute.

mod gradcheck;
mod nn;
mod ops;

pub use gradcheck::{check_gradients, finite_diff, GradCheck};
pub use nn::{batchnorm_eval, batchnorm_train, BatchStats};

use ndarray::{ArrayD, IxDyn};
use std::cell::{Cell, RefCell};
use std::rc::Rc;

type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &mut GradSink)>;

struct Node {
    value: Rc<ArrayD<f64>>,
    backward: Option<BackwardFn>,
}

/// Gradient accumulator passed to backward closures.
pub struct GradSink<'a> {
    grads: &'a mut [Option<ArrayD<f64>>],
}

impl GradSink<'_> {
    /// Add `g` to the gradient of node `id`.
    pub fn add(&mut self, id: usize, g: ArrayD<f64>) {
        match &mut self.grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Recording context for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    enabled: Cell<bool>,
    parallel: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: Cell::new(true),
            parallel: crate::par::PARALLEL_DEFAULT,
        }
    }

    /// Value-only tape: ops compute results but record no backward closures.
    pub fn new_no_grad() -> Self {
        let t = Tape::new();
        t.enabled.set(false);
        t
    }

    /// Override the data-parallel setting for heavy ops (default: crate feature).
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.enabled.get()
    }

    pub(crate) fn parallel(&self) -> bool {
        self.parallel
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            backward: if self.enabled.get() { backward } else { None },
        });
        Var { tape: self, id }
    }

    /// Insert a tensor the caller wants gradients for.
    pub fn leaf(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, None)
    }

    /// Insert a tensor treated as a constant (identical to a leaf; the
    /// distinction is only which ids the caller asks gradients for).
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, None)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(
            ArrayD::from_elem(IxDyn(&[]), value),
            None,
        )
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar root; returns per-node gradients.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(root.tape, self),
            "root belongs to a different tape"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(ArrayD::from_elem(nodes[root.id].value.raw_dim(), 1.0));
        for id in (0..=root.id).rev() {
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            if let Some(backward) = &nodes[id].backward {
                let mut sink = GradSink { grads: &mut grads };
                backward(&g, &mut sink);
            }
        }
        Gradients { grads }
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Shared handle to the node's value.
    pub fn value(&self) -> Rc<ArrayD<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "scalar_value on non-scalar");
        *v.iter().next().unwrap()
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var` (None if disconnected).
    pub fn get(&self, var: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient as an owned array, zeros if disconnected.
    pub fn get_or_zeros(&self, var: Var<'_>) -> ArrayD<f64> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(var.value().raw_dim()),
        }
    }
}
