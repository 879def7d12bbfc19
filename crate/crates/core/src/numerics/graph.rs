//! Reverse-mode autodiff over a linear tape.
//!
//! Every op appends a node holding its output value plus whatever the backward
//! pass needs. Node ids are handed out in topological order, so `backward`
//! is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::ops::{self, ConvSaved, GroupNormSaved};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        saved: ConvSaved,
    },
    UpsampleNearest2x(NodeId),
    AvgPool2x(NodeId),
    GroupNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: GroupNormSaved,
    },
    Silu(NodeId),
    Add(NodeId, NodeId),
    AddBroadcast(NodeId, NodeId),
    ConcatChannels(Vec<NodeId>),
    SliceWidth {
        input: NodeId,
        start: usize,
    },
    Sum(NodeId),
    Mse(NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Named parameter leaves, for mapping gradients back to a parameter store.
    params: BTreeMap<String, NodeId>,
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

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<NodeId> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant input; no gradient is tracked through it.
    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(t, Op::Leaf, true, "variable")
    }

    /// A named trainable leaf. Reusing a name returns the existing node.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let id = self.variable(t.clone())?;
        self.params.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn param_ids(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (out, saved) = ops::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                saved,
            },
            rg,
            "conv2d",
        )
    }

    pub fn upsample_nearest2x(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::upsample_nearest2x(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::UpsampleNearest2x(x), rg, "upsample")
    }

    pub fn avg_pool2x(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::avg_pool2x(self.value(x))?;
        let rg = self.rg(&[x]);
        self.push(out, Op::AvgPool2x(x), rg, "avg_pool")
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
    ) -> Result<NodeId> {
        let (out, saved) =
            ops::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            out,
            Op::GroupNorm {
                input: x,
                gamma,
                beta,
                saved,
            },
            rg,
            "group_norm",
        )
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::silu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Silu(x), rg, "silu")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// `x + b` where `b` is `(N|1, C, 1, 1)`, broadcast over space.
    pub fn add_broadcast(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::add_broadcast(self.value(x), self.value(b))?;
        let rg = self.rg(&[x, b]);
        self.push(out, Op::AddBroadcast(x, b), rg, "add_broadcast")
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&vals)?;
        let rg = self.rg(parts);
        self.push(out, Op::ConcatChannels(parts.to_vec()), rg, "concat")
    }

    pub fn slice_width(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let out = self.value(x).slice_width(start, len)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceWidth { input: x, start }, rg, "slice")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg, "sum")
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mse(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(v), Op::Mse(a, b), rg, "mse")
    }

    /// Back-propagates from a scalar node. `d loss / d loss = 1`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let mut contribs: Vec<(NodeId, Tensor)> = Vec::new();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    saved,
                } => {
                    let (dx, dw, db) = ops::conv2d_backward(saved, self.value(*weight), &g)?;
                    contribs.push((*input, dx));
                    contribs.push((*weight, dw));
                    if let Some(b) = bias {
                        let shape = self.value(*b).shape();
                        contribs.push((*b, Tensor::new(shape, db.into_data())?));
                    }
                }
                Op::UpsampleNearest2x(x) => {
                    contribs.push((*x, ops::upsample_nearest2x_backward(&g)));
                }
                Op::AvgPool2x(x) => {
                    contribs.push((*x, ops::avg_pool2x_backward(&g)));
                }
                Op::GroupNorm {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (dx, dg, db) = ops::group_norm_backward(saved, self.value(*gamma), &g)?;
                    contribs.push((*input, dx));
                    contribs.push((*gamma, dg));
                    contribs.push((*beta, db));
                }
                Op::Silu(x) => {
                    contribs.push((*x, ops::silu_backward(self.value(*x), &g)?));
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g));
                }
                Op::AddBroadcast(x, b) => {
                    let db = ops::add_broadcast_backward(&g, self.value(*b).shape());
                    contribs.push((*b, db));
                    contribs.push((*x, g));
                }
                Op::ConcatChannels(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.value(*p).shape()[1];
                        contribs.push((*p, g.slice_channels(start, c)?));
                        start += c;
                    }
                }
                Op::SliceWidth { input, start } => {
                    let shape = self.value(*input).shape();
                    let [n, c, h, w] = shape;
                    let len = g.shape()[3];
                    let mut dx = Tensor::zeros(shape);
                    for row in 0..n * c * h {
                        dx.data_mut()[row * w + start..row * w + start + len]
                            .copy_from_slice(&g.data()[row * len..(row + 1) * len]);
                    }
                    contribs.push((*input, dx));
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape();
                    contribs.push((*x, Tensor::full(shape, g.data()[0])));
                }
                Op::Mse(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let scale = 2.0 * g.data()[0] / av.numel() as f32;
                    let da = av.zip_map(bv, |x, y| scale * (x - y))?;
                    contribs.push((*b, da.map(|v| -v)));
                    contribs.push((*a, da));
                }
            }
            for (id, t) in contribs {
                if !self.nodes[id.0].requires_grad {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients keyed by parameter name.
    pub fn param_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, &id)| grads.take(id).map(|g| (name.clone(), g)))
            .collect()
    }
}
