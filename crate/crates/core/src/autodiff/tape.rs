use std::cell::{Cell, Ref, RefCell};

use super::{AdError, Tensor};

/// What a backward closure sees: parent values, this node's value, the
/// incoming gradient and which parents need a gradient.
pub(crate) struct BackCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a [f64],
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Record of primitive operations. Nodes are appended in evaluation order,
/// so reverse index order is a valid reverse topological order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
    kink_margin: Cell<f64>,
    kink_hit: Cell<bool>,
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
            recording: true,
            kink_margin: Cell::new(0.0),
            kink_hit: Cell::new(false),
        }
    }

    /// A tape that evaluates values only; nothing requires a gradient.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that requires a gradient (when recording).
    pub fn leaf(&self, t: Tensor) -> Result<Var<'_>, AdError> {
        if !t.is_finite() {
            return Err(AdError::NonFiniteInput("leaf"));
        }
        Ok(self.push_node(t, Vec::new(), None, self.recording))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_node(t, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Non-differentiable points (relu kinks) closer than `margin` get
    /// flagged; `kink_hit` reports whether any were seen.
    pub fn set_kink_margin(&self, margin: f64) {
        self.kink_margin.set(margin);
    }

    pub fn kink_hit(&self) -> bool {
        self.kink_hit.get()
    }

    pub(crate) fn note_kink(&self, x: f64) {
        if x.abs() <= self.kink_margin.get() {
            self.kink_hit.set(true);
        }
    }

    fn push_node(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an operation node. The backward closure is dropped when no
    /// parent requires a gradient.
    pub(crate) fn op(
        &self,
        value: Tensor,
        parents: &[Var<'_>],
        backward: impl Fn(&BackCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'_> {
        let requires = self.recording && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let bw: Option<BackwardFn> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(value, parents.iter().map(|p| p.id).collect(), bw, requires)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar root. Each node is visited exactly once.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(AdError::ShapeMismatch(format!(
                "backward needs a scalar root, got {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let ctx = BackCtx {
                    inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                    output: &node.value,
                    grad: &g,
                    needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
                };
                let parent_grads = bw(&ctx);
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

/// Gradients of one backward pass, indexed by variable.
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(*self)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}
