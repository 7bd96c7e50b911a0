use super::{conv, elementwise, norm, pool, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type CustomBackward = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send>;

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool2d {
        input: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Tape of primitive applications. Nodes are appended in evaluation order,
/// so the tape is topologically sorted by construction.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; gradients are not tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable leaf; [`Graph::grad`] returns its gradient after backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Copies the value of `v` into a new constant node, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records an operation with a caller-supplied backward rule. The rule
    /// receives the output gradient and returns one gradient buffer per input
    /// (each the size of that input).
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + Send + 'static,
    {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(
            value,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
        )
    }

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Clears all gradients so backward may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "gradients already populated; call zero_grad first".into(),
            ));
        }
        let node = &self.nodes[loss.0];
        if !node.value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Backward(
                "loss does not depend on any trainable tensor".into(),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = self.grads.split_at_mut(i);
            let Some(grad) = upper[0].as_deref() else {
                continue;
            };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: lower,
            };
            propagate(&self.nodes[i], grad, &mut sink);
        }
        self.backward_done = true;
        Ok(())
    }
}

/// Accumulates gradient contributions into upstream nodes.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Runs `f` on the (zero-initialized if absent) gradient buffer of `v`.
    pub(crate) fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    pub(crate) fn add(&mut self, v: Var, contribution: &[f64]) {
        self.with(v, |g| {
            for (gi, ci) in g.iter_mut().zip(contribution) {
                *gi += ci;
            }
        });
    }
}

fn propagate(node: &Node, grad: &[f64], sink: &mut GradSink<'_>) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => conv::backward(*input, *weight, *bias, *stride, *padding, out, grad, sink),
        Op::MaxPool2d { input, argmax } => pool::max_backward(*input, argmax, grad, sink),
        Op::AvgPool2d { input } => pool::avg_backward(*input, out, grad, sink),
        Op::Upsample { input, factor } => pool::upsample_backward(*input, *factor, out, grad, sink),
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::backward(
            *input,
            *gamma,
            *beta,
            xhat,
            inv_std,
            *batch_stats,
            grad,
            sink,
        ),
        Op::Relu { input } => elementwise::relu_backward(*input, out, grad, sink),
        Op::Sigmoid { input } => elementwise::sigmoid_backward(*input, out, grad, sink),
        Op::Add { a, b } => elementwise::add_backward(*a, *b, out, grad, sink),
        Op::Mul { a, b } => elementwise::mul_backward(*a, *b, out, grad, sink),
        Op::Scale { input, factor } => {
            sink.with(*input, |g| {
                for (gi, go) in g.iter_mut().zip(grad) {
                    *gi += factor * go;
                }
            });
        }
        Op::Concat { a, b } => elementwise::concat_backward(*a, *b, out, grad, sink),
        Op::SliceChannels { input, start } => {
            elementwise::slice_backward(*input, *start, out, grad, sink)
        }
        Op::Sum { input } => {
            let g0 = grad[0];
            sink.with(*input, |g| g.iter_mut().for_each(|x| *x += g0));
        }
        Op::Mean { input } => {
            let n = sink.value(*input).numel() as f64;
            let g0 = grad[0] / n;
            sink.with(*input, |g| g.iter_mut().for_each(|x| *x += g0));
        }
        Op::Custom { inputs, backward } => {
            let grads = backward(grad);
            debug_assert_eq!(grads.len(), inputs.len());
            for (v, g) in inputs.iter().zip(grads) {
                if sink.wants(*v) {
                    sink.add(*v, &g);
                }
            }
        }
    }
}

impl Graph {
    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(total), rg, Op::Sum { input })
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(m), rg, Op::Mean { input })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|x| x * factor).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Scale { input, factor })
    }
}
