use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::ops::{self, ConvDims, DenseGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
    },
    Relu(NodeId),
    AvgPool {
        x: NodeId,
        size: usize,
    },
    Reshape(NodeId),
    SelectColumns {
        x: NodeId,
        cols: Vec<usize>,
    },
    ConcatColumns(Vec<NodeId>),
    Softmax {
        x: NodeId,
        tau: f64,
    },
    CrossEntropy {
        pred: NodeId,
        target: NodeId,
    },
    SquaredL2 {
        a: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Dense { x, w, b } | Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Relu(x) | Op::Reshape(x) | Op::Scale(x, _) => vec![*x],
            Op::AvgPool { x, .. } | Op::SelectColumns { x, .. } | Op::Softmax { x, .. } => vec![*x],
            Op::ConcatColumns(parts) => parts.clone(),
            Op::CrossEntropy { pred, target } => vec![*pred, *target],
            Op::SquaredL2 { a, b } | Op::Add(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
}

/// A recorded forward computation.
///
/// Nodes are appended in evaluation order, so every parent precedes its
/// children and the graph is acyclic by construction. Named leaves
/// (parameters or inputs) are the only nodes gradients can be requested for.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
}

/// Gradients keyed by leaf name; each has the shape of its leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap(BTreeMap<String, Tensor>);

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor> {
        self.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{op:?}")));
        }
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Registers a named leaf that gradients may be requested for.
    pub fn leaf(
        &mut self,
        name: impl Into<String>,
        value: impl Into<Arc<Tensor>>,
    ) -> Result<NodeId> {
        let name = name.into();
        if self.leaves.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate leaf `{name}`")));
        }
        let value = value.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("leaf `{name}`")));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.leaves.insert(name, id);
        Ok(id)
    }

    /// An anonymous input that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Result<NodeId> {
        let value = value.into();
        if !value.is_finite() {
            return Err(Error::NonFinite("constant".into()));
        }
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map `x wᵀ + b`. `x` is flattened to `[n, in]` using its leading axis.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 || bv.shape() != [wv.shape()[0]] {
            return Err(Error::invalid(format!(
                "dense: weight {:?} / bias {:?} mismatch",
                wv.shape(),
                bv.shape()
            )));
        }
        let (n, cols) = xv.rows_cols();
        if cols != wv.shape()[1] {
            return Err(Error::invalid(format!(
                "dense: input width {cols} does not match weight {:?}",
                wv.shape()
            )));
        }
        let out = ops::dense_forward(xv.data(), n, wv, bv);
        self.push(Op::Dense { x, w, b }, out)
    }

    /// Stride-1 convolution on `[n, c, h, w]` input with `pad` zeros on each side.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, pad: usize) -> Result<NodeId> {
        let dims = self.conv_dims(x, w, b, pad)?;
        let out = ops::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
        );
        self.push(Op::Conv2d { x, w, b, pad }, out)
    }

    fn conv_dims(&self, x: NodeId, w: NodeId, b: NodeId, pad: usize) -> Result<ConvDims> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::invalid(format!(
                "conv2d: input {xs:?}, weight {ws:?}, bias {bs:?} incompatible"
            )));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(Error::invalid("conv2d: kernel larger than padded input"));
        }
        Ok(ConvDims {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            oc: ws[0],
            kh: ws[2],
            kw: ws[3],
            pad,
        })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|z| z.max(0.0)).collect(),
        );
        self.push(Op::Relu(x), out)
    }

    pub fn avg_pool(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let s = self.value(x).shape();
        if s.len() != 4 || size == 0 || s[2] < size || s[3] < size {
            return Err(Error::invalid(format!("avg_pool({size}) on shape {s:?}")));
        }
        let out = ops::avg_pool_forward(self.value(x), size);
        self.push(Op::AvgPool { x, size }, out)
    }

    /// Keeps the leading axis and flattens the rest.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (n, cols) = v.rows_cols();
        self.reshape(x, vec![n, cols])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        self.push(Op::Reshape(x), out)
    }

    /// Picks columns (in the given order) of a rank-2 node.
    pub fn select_columns(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 2 || cols.is_empty() || cols.iter().any(|&c| c >= v.shape()[1]) {
            return Err(Error::invalid(format!(
                "select_columns {cols:?} on shape {:?}",
                v.shape()
            )));
        }
        let (n, width) = (v.shape()[0], v.shape()[1]);
        let mut out = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            out.extend(cols.iter().map(|&c| v.data()[r * width + c]));
        }
        let out = Tensor::from_parts(vec![n, cols.len()], out);
        self.push(
            Op::SelectColumns {
                x,
                cols: cols.to_vec(),
            },
            out,
        )
    }

    /// Concatenates rank-2 nodes with equal row counts along the column axis.
    pub fn concat_columns(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_columns of nothing"))?;
        let n = self.value(*first).shape()[0];
        let mut width = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::invalid(format!("concat_columns: part shape {s:?}")));
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_parts(vec![n, width], out);
        self.push(Op::ConcatColumns(parts.to_vec()), out)
    }

    pub fn softmax(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        let out = ops::softmax_with_temperature(self.value(x), tau)?;
        self.push(Op::Softmax { x, tau }, out)
    }

    pub fn cross_entropy(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let loss = ops::cross_entropy(self.value(pred), self.value(target))?;
        self.push(
            Op::CrossEntropy { pred, target },
            Tensor::from_parts(vec![1], vec![loss]),
        )
    }

    pub fn squared_l2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let loss = ops::squared_l2(self.value(a), self.value(b))?;
        self.push(
            Op::SquaredL2 { a, b },
            Tensor::from_parts(vec![1], vec![loss]),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::invalid(format!(
                "add: shape mismatch {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = Tensor::from_parts(
            av.shape().to_vec(),
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x + y)
                .collect(),
        );
        self.push(Op::Add(a, b), out)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|z| z * factor).collect(),
        );
        self.push(Op::Scale(x, factor), out)
    }

    /// Reverse-mode sweep from a scalar `loss` to the named leaves in `wrt`.
    ///
    /// Leaves that do not influence the loss receive a zero gradient.
    pub fn backward(&self, loss: NodeId, wrt: &[&str]) -> Result<GradientMap> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut targets = Vec::with_capacity(wrt.len());
        for name in wrt {
            let id = self
                .leaf_id(name)
                .ok_or_else(|| Error::NotFound(format!("leaf `{name}`")))?;
            targets.push((*name, id));
        }

        // Only nodes upstream of a requested leaf need a gradient buffer.
        let mut needs = vec![false; self.nodes.len()];
        for &(_, id) in &targets {
            needs[id.0] = true;
        }
        for i in 0..=loss.0 {
            if !needs[i] {
                needs[i] = self.nodes[i].op.parents().iter().any(|p| needs[p.0]);
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if needs[loss.0] {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &needs, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for (name, id) in targets {
            let shape = self.value(id).shape().to_vec();
            let data = grads
                .get(id.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            out.insert(name.to_string(), Tensor::from_parts(shape, data));
        }
        Ok(GradientMap(out))
    }

    fn propagate(&self, i: usize, g: &[f64], needs: &[bool], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        // Each parent buffer is taken, updated and put back in turn, so a node
        // feeding the same op twice accumulates both contributions.
        let mut with = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !needs[id.0] {
                return;
            }
            let mut buf = grads[id.0]
                .take()
                .unwrap_or_else(|| vec![0.0; self.nodes[id.0].value.len()]);
            f(&mut buf);
            grads[id.0] = Some(buf);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, _) = xv.rows_cols();
                let none = || DenseGrads {
                    dx: None,
                    dw: None,
                    db: None,
                };
                with(*x, &mut |d| {
                    ops::dense_backward(
                        xv.data(),
                        n,
                        wv,
                        g,
                        DenseGrads {
                            dx: Some(d),
                            ..none()
                        },
                    )
                });
                with(*w, &mut |d| {
                    ops::dense_backward(
                        xv.data(),
                        n,
                        wv,
                        g,
                        DenseGrads {
                            dw: Some(d),
                            ..none()
                        },
                    )
                });
                with(*b, &mut |d| {
                    ops::dense_backward(
                        xv.data(),
                        n,
                        wv,
                        g,
                        DenseGrads {
                            db: Some(d),
                            ..none()
                        },
                    )
                });
            }
            Op::Conv2d { x, w, b, pad } => {
                let dims = self
                    .conv_dims(*x, *w, *b, *pad)
                    .expect("validated at construction");
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let none = || DenseGrads {
                    dx: None,
                    dw: None,
                    db: None,
                };
                with(*x, &mut |d| {
                    ops::conv2d_backward(
                        xd,
                        wd,
                        g,
                        dims,
                        DenseGrads {
                            dx: Some(d),
                            ..none()
                        },
                    )
                });
                with(*w, &mut |d| {
                    ops::conv2d_backward(
                        xd,
                        wd,
                        g,
                        dims,
                        DenseGrads {
                            dw: Some(d),
                            ..none()
                        },
                    )
                });
                with(*b, &mut |d| {
                    ops::conv2d_backward(
                        xd,
                        wd,
                        g,
                        dims,
                        DenseGrads {
                            db: Some(d),
                            ..none()
                        },
                    )
                });
            }
            Op::Relu(x) => with(*x, &mut |dx| {
                for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(node.value.data()) {
                    if y > 0.0 {
                        *d += gi;
                    }
                }
            }),
            Op::AvgPool { x, size } => {
                let shape = self.value(*x).shape();
                with(*x, &mut |dx| ops::avg_pool_backward(shape, *size, g, dx));
            }
            Op::Reshape(x) => with(*x, &mut |dx| accumulate(dx, g, 1.0)),
            Op::SelectColumns { x, cols } => {
                let width = self.value(*x).shape()[1];
                with(*x, &mut |dx| {
                    for (r, grow) in g.chunks(cols.len()).enumerate() {
                        for (&c, gi) in cols.iter().zip(grow) {
                            dx[r * width + c] += gi;
                        }
                    }
                });
            }
            Op::ConcatColumns(parts) => {
                let (rows, width) = (node.value.shape()[0], node.value.shape()[1]);
                let mut offset = 0;
                for p in parts {
                    let pw = self.value(*p).shape()[1];
                    with(*p, &mut |dp| {
                        for r in 0..rows {
                            for c in 0..pw {
                                dp[r * pw + c] += g[r * width + offset + c];
                            }
                        }
                    });
                    offset += pw;
                }
            }
            Op::Softmax { x, tau } => {
                with(*x, &mut |dx| {
                    ops::softmax_backward(&node.value, g, *tau, dx)
                });
            }
            Op::CrossEntropy { pred, target } => {
                let (pv, tv) = (self.value(*pred), self.value(*target));
                with(*pred, &mut |d| {
                    ops::cross_entropy_backward(pv, tv, g[0], Some(d), None)
                });
                with(*target, &mut |d| {
                    ops::cross_entropy_backward(pv, tv, g[0], None, Some(d))
                });
            }
            Op::SquaredL2 { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, _) = av.rows_cols();
                let scale = 2.0 * g[0] / rows as f64;
                with(*a, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(av.data()).zip(bv.data()) {
                        *d += scale * (x - y);
                    }
                });
                with(*b, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(av.data()).zip(bv.data()) {
                        *d -= scale * (x - y);
                    }
                });
            }
            Op::Add(a, b) => {
                with(*a, &mut |d| accumulate(d, g, 1.0));
                with(*b, &mut |d| accumulate(d, g, 1.0));
            }
            Op::Scale(x, factor) => with(*x, &mut |d| accumulate(d, g, *factor)),
        }
    }
}

fn accumulate(dst: &mut [f64], g: &[f64], factor: f64) {
    for (d, gi) in dst.iter_mut().zip(g) {
        *d += factor * gi;
    }
}
