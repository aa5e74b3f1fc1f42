use std::ops::Range;

use crate::autodiff::params::ParamStore;
use crate::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
    /// Which inputs need a gradient; rules may return `None` for the others.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

#[derive(Clone, Debug)]
struct Binding {
    name: String,
    ranges: Vec<Range<usize>>,
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    binding: Option<Binding>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumers, and [`Tape::backward`] walks the nodes in exact reverse order.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by convolutions recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// Records a gradient-receiving leaf that is not bound to a parameter store.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    /// Binds the whole parameter `name` as a trainable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        let full: Vec<Range<usize>> = store.get(name).shape().iter().map(|&d| 0..d).collect();
        self.param_slice(store, name, &full)
    }

    /// Binds the sub-block `ranges` of parameter `name` as a trainable leaf.
    /// Gradients flow back to exactly those elements.
    pub fn param_slice(&mut self, store: &ParamStore<T>, name: &str, ranges: &[Range<usize>]) -> Var {
        let value = store.get(name).slice(ranges);
        self.leaf(
            value,
            true,
            Some(Binding {
                name: name.to_string(),
                ranges: ranges.to_vec(),
            }),
        )
    }

    /// Copies the sub-block `ranges` of parameter `name` as a frozen constant.
    pub fn frozen_slice(&mut self, store: &ParamStore<T>, name: &str, ranges: &[Range<usize>]) -> Var {
        let value = store.get(name).slice(ranges);
        self.constant(value)
    }

    /// Same value, cut off from the gradient.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, binding: Option<Binding>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
            binding,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an operation result. The backward rule is dropped when no input
    /// requires a gradient.
    pub fn push(&mut self, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            binding: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a one-element `loss`. Gradients of a value used more
    /// than once are summed.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let root = &self.nodes[loss.0];
        assert_eq!(
            root.value.len(),
            1,
            "backward() needs a scalar loss, got shape {:?}",
            root.value.shape()
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
            };
            let input_grads = rule(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), self.nodes[v.0].value.len());
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[i] = Some(g);
        }
        let bindings = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| n.binding.as_ref().map(|b| (i, b.clone())))
            .collect();
        Gradients { grads, bindings }
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(usize, Binding)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every bound-parameter gradient into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (i, b) in &self.bindings {
            if let Some(g) = &self.grads[*i] {
                store.accumulate(&b.name, &b.ranges, g);
            }
        }
    }
}
