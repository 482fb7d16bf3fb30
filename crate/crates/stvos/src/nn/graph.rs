//! Eager tape-based reverse-mode automatic differentiation over `f64` arrays.
//!
//! Every operation computes its value immediately and, when any input
//! requires gradients, records a backward closure on the tape. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients into every leaf that asked for them.
//!
//! Values are stored behind `Rc` so backward closures can capture the
//! inputs they need without copying. Everything is `f64` and
//! single-threaded, which keeps training runs bit-reproducible.

use std::rc::Rc;

use ndarray::ArrayD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Given the gradient flowing into a node, produce gradients for each
/// parent (`None` for parents that do not require gradients).
type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    requires_grad: bool,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<ArrayD<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A node that participates in gradient computation.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(Rc::new(value), true, Vec::new(), None)
    }

    /// A node treated as a constant: no gradient is ever computed for it.
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(Rc::new(value), false, Vec::new(), None)
    }

    pub fn constant_rc(&mut self, value: Rc<ArrayD<f64>>) -> NodeId {
        self.push(value, false, Vec::new(), None)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    pub fn value_rc(&self, id: NodeId) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes[id.0].value)
    }

    /// Scalar convenience accessor; panics if the node is not 0-dimensional.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.ndim(), 0, "scalar() on a non-scalar node");
        v[[]]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Record an op result. `backward` is dropped when no parent needs
    /// gradients, so pure-inference graphs carry no tape.
    pub fn op(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<NodeId>,
        backward: BackwardFn,
    ) -> NodeId {
        let needs = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        if needs {
            self.push(Rc::new(value), true, parents, Some(backward))
        } else {
            self.push(Rc::new(value), false, Vec::new(), None)
        }
    }

    fn push(
        &mut self,
        value: Rc<ArrayD<f64>>,
        requires_grad: bool,
        parents: Vec<NodeId>,
        backward: Option<BackwardFn>,
    ) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar output. Returns the gradient of
    /// `output` with respect to every grad-requiring node reachable from it.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let out = &self.nodes[output.0];
        assert_eq!(out.value.ndim(), 0, "backward() root must be a scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(ArrayD::from_elem(ndarray::IxDyn(&[]), 1.0));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            // Leaf grads stay; interior grads can be dropped after use.
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let parent_grads = bw(&grad_out);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[pid.0].requires_grad {
                    continue;
                }
                match &mut grads[pid.0] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
            if node.backward.is_some() && !node.parents.is_empty() {
                // keep nothing for interior nodes
                grads[id] = None;
            } else {
                grads[id] = Some(grad_out);
            }
        }
        Gradients { grads }
    }
}
