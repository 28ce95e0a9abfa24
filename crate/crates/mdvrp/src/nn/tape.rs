//! Reverse-mode differentiation on a flat operation tape.
//!
//! A tape records one forward pass; node ids index into it in creation
//! order, which is already a topological order, so the backward sweep
//! is a single reverse walk that visits each node once. Parameters are
//! named leaves; after a backward pass their gradients are collected
//! into a name-keyed map for the optimizer.

use std::collections::BTreeMap;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf { name: Option<String> },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    Log { a: NodeId },
    Transpose { a: NodeId },
    Softmax { a: NodeId },
    /// Sets masked entries to -inf before a softmax.
    MaskFill { a: NodeId, mask: Vec<bool> },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    GatherRows { a: NodeId, idx: Vec<usize> },
    MeanRows { a: NodeId, idx: Vec<usize> },
    /// Column-wise max over rows; argmax row recorded for the backward.
    ColMax { a: NodeId, argmax: Vec<usize> },
    /// Row-wise normalization with learned gain and bias.
    RowNorm { a: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Select { a: NodeId, r: usize, c: usize },
    SumAll { a: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Named parameter gradients collected by a backward pass.
pub type Gradients = BTreeMap<String, Tensor>;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf: participates in the forward pass, gradient
    /// discarded.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf { name: None })
    }

    /// A named parameter leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf { name: Some(name.to_string()) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add { a, b })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale { a, k })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh { a })
    }

    /// tanh clipping: A * tanh(x), outputs in (-A, A).
    pub fn tanh_clip(&mut self, a: NodeId, amplitude: f64) -> NodeId {
        let t = self.tanh(a);
        self.scale(t, amplitude)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu { a })
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log { a })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose { a })
    }

    /// Row-wise softmax; -inf entries (from `mask_fill`) get exactly 0.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::Softmax { a })
    }

    /// Replaces entries where `mask` is true with -inf. `mask` is laid
    /// out like the tensor data, row-major.
    pub fn mask_fill(&mut self, a: NodeId, mask: &[bool]) -> NodeId {
        let src = self.value(a);
        assert_eq!(mask.len(), src.len(), "mask length mismatch");
        let mut v = src.clone();
        for (x, &m) in v.data_mut().iter_mut().zip(mask) {
            if m {
                *x = f64::NEG_INFINITY;
            }
        }
        self.push(v, Op::MaskFill { a, mask: mask.to_vec() })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice out of range");
        let mut v = Tensor::zeros(src.rows(), len);
        for r in 0..src.rows() {
            for c in 0..len {
                v.set(r, c, src.at(r, start + c));
            }
        }
        self.push(v, Op::SliceCols { a, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..t.cols() {
                    v.set(r, at + c, t.at(r, c));
                }
            }
            at += t.cols();
        }
        self.push(v, Op::ConcatCols { parts: parts.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let src = self.value(a);
        let mut v = Tensor::zeros(idx.len(), src.cols());
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..src.cols() {
                v.set(r, c, src.at(i, c));
            }
        }
        self.push(v, Op::GatherRows { a, idx: idx.to_vec() })
    }

    /// Mean of the selected rows, as a single row.
    pub fn mean_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        assert!(!idx.is_empty(), "mean over no rows");
        let src = self.value(a);
        let mut v = Tensor::zeros(1, src.cols());
        for &i in idx {
            for c in 0..src.cols() {
                v.set(0, c, v.at(0, c) + src.at(i, c));
            }
        }
        let v = v.scale(1.0 / idx.len() as f64);
        self.push(v, Op::MeanRows { a, idx: idx.to_vec() })
    }

    /// Column-wise max over all rows, yielding a single row.
    pub fn col_max(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        assert!(src.rows() > 0);
        let mut v = Tensor::zeros(1, src.cols());
        let mut argmax = vec![0usize; src.cols()];
        for c in 0..src.cols() {
            let mut best = src.at(0, c);
            for r in 1..src.rows() {
                if src.at(r, c) > best {
                    best = src.at(r, c);
                    argmax[c] = r;
                }
            }
            v.set(0, c, best);
        }
        self.push(v, Op::ColMax { a, argmax })
    }

    /// Normalizes each row to zero mean and unit variance over the
    /// feature axis, then applies a learned gain and bias (single rows).
    pub fn row_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let eps = 1e-8;
        let src = self.value(a);
        let g = self.value(gain);
        let b = self.value(bias);
        assert_eq!(g.shape(), (1, src.cols()), "gain shape mismatch");
        assert_eq!(b.shape(), (1, src.cols()), "bias shape mismatch");
        let n = src.cols() as f64;
        let mut v = Tensor::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            for c in 0..src.cols() {
                let xhat = (src.at(r, c) - mean) / sd;
                v.set(r, c, g.at(0, c) * xhat + b.at(0, c));
            }
        }
        self.push(v, Op::RowNorm { a, gain, bias, eps })
    }

    /// Extracts one element as a 1x1 tensor.
    pub fn select(&mut self, a: NodeId, r: usize, c: usize) -> NodeId {
        let v = Tensor::scalar(self.value(a).at(r, c));
        self.push(v, Op::Select { a, r, c })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(v, Op::SumAll { a })
    }

    /// Multi-head scaled dot-product attention composed from tape
    /// primitives: per-head attention over shared keys/values, heads
    /// concatenated. No output projection.
    pub fn mha(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let dim = self.value(q).cols();
        assert_eq!(self.value(k).cols(), dim, "key dim mismatch");
        assert_eq!(self.value(v).cols(), dim, "value dim mismatch");
        assert_eq!(
            self.value(k).rows(),
            self.value(v).rows(),
            "key/value row count mismatch"
        );
        assert!(heads >= 1 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh);
            let kh = self.slice_cols(k, h * dh, dh);
            let vh = self.slice_cols(v, h * dh, dh);
            let kt = self.transpose(kh);
            let scores = self.matmul(qh, kt);
            let scaled = self.scale(scores, scale);
            let attn = self.softmax(scaled);
            outs.push(self.matmul(attn, vh));
        }
        if heads == 1 {
            outs[0]
        } else {
            self.concat_cols(&outs)
        }
    }

    /// Backward pass from a 1x1 root seeded with `seed`. Returns the
    /// gradients of all named parameter leaves. Panics if any gradient
    /// is non-finite.
    pub fn backward(&mut self, root: NodeId, seed: f64) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(seed));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { name } => {
                    if name.is_some() {
                        grads[i] = Some(g); // keep for collection below
                    }
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let ga = g.matmul(&self.value(b).transpose());
                    let gb = self.value(a).transpose().matmul(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Scale { a, k } => {
                    let (a, k) = (*a, *k);
                    accumulate(&mut grads, a, g.scale(k));
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let mut ga = g;
                    for (gx, &t) in ga.data_mut().iter_mut().zip(y.data()) {
                        *gx *= 1.0 - t * t;
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Relu { a } => {
                    let a = *a;
                    let x = self.value(a).clone();
                    let mut ga = g;
                    for (gx, &v) in ga.data_mut().iter_mut().zip(x.data()) {
                        if v <= 0.0 {
                            *gx = 0.0;
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Log { a } => {
                    let a = *a;
                    let x = self.value(a).clone();
                    let mut ga = g;
                    for (gx, &v) in ga.data_mut().iter_mut().zip(x.data()) {
                        *gx /= v;
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Transpose { a } => {
                    let a = *a;
                    accumulate(&mut grads, a, g.transpose());
                }
                Op::Softmax { a } => {
                    let a = *a;
                    let s = &self.nodes[i].value;
                    let mut ga = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dot: f64 =
                            s.row(r).iter().zip(g.row(r)).map(|(si, gi)| si * gi).sum();
                        for c in 0..s.cols() {
                            ga.set(r, c, s.at(r, c) * (g.at(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::MaskFill { a, mask } => {
                    let a = *a;
                    let mut ga = g;
                    for (gx, &m) in ga.data_mut().iter_mut().zip(mask) {
                        if m {
                            *gx = 0.0;
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::SliceCols { a, start, len } => {
                    let (a, start, len) = (*a, *start, *len);
                    let src = self.value(a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for c in 0..len {
                            ga.set(r, start + c, g.at(r, c));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(p).cols();
                        let rows = self.value(p).rows();
                        let mut gp = Tensor::zeros(rows, w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp.set(r, c, g.at(r, at + c));
                            }
                        }
                        accumulate(&mut grads, p, gp);
                        at += w;
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let rows = self.value(p).rows();
                        let cols = self.value(p).cols();
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gp.set(r, c, g.at(at + r, c));
                            }
                        }
                        accumulate(&mut grads, p, gp);
                        at += rows;
                    }
                }
                Op::GatherRows { a, idx } => {
                    let a = *a;
                    let idx = idx.clone();
                    let src = self.value(a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for (r, &i2) in idx.iter().enumerate() {
                        for c in 0..src.cols() {
                            ga.set(i2, c, ga.at(i2, c) + g.at(r, c));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::MeanRows { a, idx } => {
                    let a = *a;
                    let idx = idx.clone();
                    let src = self.value(a);
                    let w = 1.0 / idx.len() as f64;
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for &i2 in &idx {
                        for c in 0..src.cols() {
                            ga.set(i2, c, ga.at(i2, c) + w * g.at(0, c));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ColMax { a, argmax } => {
                    let a = *a;
                    let argmax = argmax.clone();
                    let src = self.value(a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for (c, &r) in argmax.iter().enumerate() {
                        ga.set(r, c, g.at(0, c));
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::RowNorm { a, gain, bias, eps } => {
                    let (a, gain, bias, eps) = (*a, *gain, *bias, *eps);
                    let src = self.value(a).clone();
                    let gt = self.value(gain).clone();
                    let n = src.cols() as f64;
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    let mut ggain = Tensor::zeros(1, src.cols());
                    let mut gbias = Tensor::zeros(1, src.cols());
                    for r in 0..src.rows() {
                        let row = src.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var =
                            row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                        let sd = (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) / sd).collect();
                        // d y / d gain, bias
                        for c in 0..src.cols() {
                            ggain.set(0, c, ggain.at(0, c) + g.at(r, c) * xhat[c]);
                            gbias.set(0, c, gbias.at(0, c) + g.at(r, c));
                        }
                        // d y / d x through mean and variance
                        let gxhat: Vec<f64> =
                            (0..src.cols()).map(|c| g.at(r, c) * gt.at(0, c)).collect();
                        let mean_gxhat = gxhat.iter().sum::<f64>() / n;
                        let mean_gxhat_xhat =
                            gxhat.iter().zip(&xhat).map(|(a2, b2)| a2 * b2).sum::<f64>() / n;
                        for c in 0..src.cols() {
                            let v = (gxhat[c] - mean_gxhat - xhat[c] * mean_gxhat_xhat) / sd;
                            ga.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, gain, ggain);
                    accumulate(&mut grads, bias, gbias);
                }
                Op::Select { a, r, c } => {
                    let (a, r, c) = (*a, *r, *c);
                    let src = self.value(a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    ga.set(r, c, g.item());
                    accumulate(&mut grads, a, ga);
                }
                Op::SumAll { a } => {
                    let a = *a;
                    let src = self.value(a);
                    let ga = Tensor::from_vec(
                        src.rows(),
                        src.cols(),
                        vec![g.item(); src.len()],
                    );
                    accumulate(&mut grads, a, ga);
                }
            }
        }

        let mut out = Gradients::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                if let Some(g) = grads[i].take() {
                    assert!(g.is_finite(), "non-finite gradient for parameter {name}");
                    match out.entry(name.clone()) {
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(g);
                        }
                        std::collections::btree_map::Entry::Occupied(mut e) => {
                            let sum = e.get().add(&g);
                            e.insert(sum);
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(cur) => *cur = cur.add(&g),
        slot @ None => *slot = Some(g),
    }
}

/// All parameters of a set registered on one tape, so repeated forward
/// passes (one per decode step) share a single leaf per weight.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &super::params::ParamSet) -> Self {
        let mut ids = BTreeMap::new();
        for (name, t) in params.iter() {
            ids.insert(name.clone(), tape.param(name, t.clone()));
        }
        BoundParams { ids }
    }

    /// Wraps already-registered leaves (gradient-check harnesses build
    /// their own).
    pub fn from_ids(ids: BTreeMap<String, NodeId>) -> Self {
        BoundParams { ids }
    }

    pub fn get(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}

/// Central-difference gradient check. `build` must construct the same
/// scalar-valued forward pass from the named inputs each time it is
/// called. Returns the worst relative disagreement between the tape
/// gradient and finite differences over every coordinate of every
/// input, using |ad - fd| / max(1, |ad|, |fd|).
pub fn grad_check(
    inputs: &[(&str, Tensor)],
    build: impl Fn(&mut Tape, &BTreeMap<String, NodeId>) -> NodeId,
) -> f64 {
    let eps = 1e-5;
    let eval = |point: &[(&str, Tensor)]| -> (f64, Gradients) {
        let mut tape = Tape::new();
        let mut ids = BTreeMap::new();
        for (name, t) in point {
            ids.insert(name.to_string(), tape.param(name, t.clone()));
        }
        let root = build(&mut tape, &ids);
        assert!(tape.value(root).is_finite(), "non-finite intermediate in gradient check");
        let y = tape.value(root).item();
        let grads = tape.backward(root, 1.0);
        (y, grads)
    };

    let (_, analytic) = eval(inputs);

    let mut worst: f64 = 0.0;
    for (pi, (name, tensor)) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(tensor.rows(), tensor.cols());
        let ad = analytic.get(*name).unwrap_or(&zero);
        for k in 0..tensor.len() {
            let mut plus: Vec<(&str, Tensor)> = inputs.to_vec();
            plus[pi].1.data_mut()[k] += eps;
            let mut minus: Vec<(&str, Tensor)> = inputs.to_vec();
            minus[pi].1.data_mut()[k] -= eps;
            let fp = forward_only(&plus, &build);
            let fm = forward_only(&minus, &build);
            let fd = (fp - fm) / (2.0 * eps);
            let g = ad.data()[k];
            let err = (g - fd).abs() / 1.0f64.max(g.abs()).max(fd.abs());
            worst = worst.max(err);
        }
    }
    worst
}

fn forward_only(
    point: &[(&str, Tensor)],
    build: &impl Fn(&mut Tape, &BTreeMap<String, NodeId>) -> NodeId,
) -> f64 {
    let mut tape = Tape::new();
    let mut ids = BTreeMap::new();
    for (name, t) in point {
        ids.insert(name.to_string(), tape.param(name, t.clone()));
    }
    let root = build(&mut tape, &ids);
    let v = tape.value(root);
    assert!(v.is_finite(), "non-finite intermediate in gradient check");
    v.item()
}
