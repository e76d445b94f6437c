//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation records a node holding its output value; `backward` walks
//! the tape in reverse, pushing adjoints to parents and accumulating masked
//! parameter gradients. Values are checked for finiteness as they are
//! produced; the first offending op poisons the tape and surfaces through
//! [`Tape::check_healthy`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::store::{ParamId, ParamValues};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    GatherRow { id: ParamId, row: usize },
    MatVecParam { id: ParamId, x: VarId },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    ScaleConst { x: VarId, k: f64 },
    ScaleVar { x: VarId, s: VarId },
    Concat { parts: Vec<VarId> },
    Relu { x: VarId },
    LeakyRelu { x: VarId, slope: f64 },
    Sigmoid { x: VarId },
    Tanh { x: VarId },
    Softmax { x: VarId },
    LogSumExp { x: VarId },
    Pick { x: VarId, index: usize },
    Dot { a: VarId, b: VarId },
    CosineSim { a: VarId, b: VarId },
    BernoulliCrossEntropy { lambda: VarId, target: f64 },
    WeightedSum { terms: Vec<(VarId, f64)> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape<'s> {
    values: &'s ParamValues,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, VarId>,
    first_error: Option<String>,
}

impl<'s> Tape<'s> {
    pub fn new(values: &'s ParamValues) -> Self {
        Self {
            values,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            first_error: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: VarId) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.at(0)
    }

    /// Surfaces the first non-finite value produced since construction.
    pub fn check_healthy(&self) -> Result<()> {
        match &self.first_error {
            None => Ok(()),
            Some(msg) => Err(Error::Numeric(msg.clone())),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        if self.first_error.is_none() && !value.is_finite() {
            self.first_error = Some(format!("non-finite value produced by {}", op_name(&op)));
        }
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(Op::Const, value)
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> VarId {
        self.constant(Tensor::vector(data.to_vec()))
    }

    pub fn scalar(&mut self, value: f64) -> VarId {
        self.constant(Tensor::scalar(value))
    }

    /// Whole parameter tensor as a leaf (vectors and biases). Leaves are
    /// deduplicated per parameter.
    pub fn param(&mut self, id: ParamId) -> VarId {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let value = self.values.value(id).clone();
        let v = self.push(Op::Param(id), value);
        self.param_leaves.insert(id, v);
        v
    }

    /// One row of a matrix parameter, without materializing the matrix.
    pub fn gather_row(&mut self, id: ParamId, row: usize) -> VarId {
        let m = self.values.value(id);
        assert!(m.is_matrix(), "gather_row on non-matrix parameter");
        let value = Tensor::vector(m.row(row).to_vec());
        self.push(Op::GatherRow { id, row }, value)
    }

    /// y = P·x for a matrix parameter P.
    pub fn matvec(&mut self, id: ParamId, x: VarId) -> VarId {
        let m = self.values.value(id);
        let xv = self.value(x);
        assert!(m.is_matrix(), "matvec weight must be a matrix");
        assert_eq!(
            m.cols(),
            xv.len(),
            "matvec shape mismatch: {:?} vs {:?}",
            m.shape(),
            xv.shape()
        );
        let rows = m.rows();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m
                .row(r)
                .iter()
                .zip(xv.data())
                .map(|(w, v)| w * v)
                .sum::<f64>();
        }
        self.push(Op::MatVecParam { id, x }, Tensor::vector(out))
    }

    /// linear(W, x[, b]) = W·x + b.
    pub fn linear(&mut self, w: ParamId, x: VarId, b: Option<ParamId>) -> VarId {
        let wx = self.matvec(w, x);
        match b {
            Some(bias) => {
                let bv = self.param(bias);
                self.add(wx, bv)
            }
            None => wx,
        }
    }

    fn binary_elementwise(
        &mut self,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> VarId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(
            av.shape(),
            bv.shape(),
            "{name} shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = av.shape().to_vec();
        self.push(op, Tensor::from_vec(&shape, data))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    pub fn scale_const(&mut self, x: VarId, k: f64) -> VarId {
        let data = self.value(x).data().iter().map(|v| v * k).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::ScaleConst { x, k }, Tensor::from_vec(&shape, data))
    }

    /// x scaled by a scalar variable s.
    pub fn scale_var(&mut self, x: VarId, s: VarId) -> VarId {
        assert_eq!(self.value(s).len(), 1, "scale_var scale must be scalar");
        let sv = self.value(s).at(0);
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::ScaleVar { x, s }, Tensor::from_vec(&shape, data))
    }

    pub fn concat(&mut self, parts: &[VarId]) -> VarId {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert!(t.is_vector(), "concat expects vectors");
            data.extend_from_slice(t.data());
        }
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            Tensor::vector(data),
        )
    }

    fn unary_elementwise(&mut self, x: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(op, Tensor::from_vec(&shape, data))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        self.unary_elementwise(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: f64) -> VarId {
        self.unary_elementwise(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        self.unary_elementwise(x, sigmoid_scalar, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        self.unary_elementwise(x, f64::tanh, Op::Tanh { x })
    }

    /// Numerically stable softmax (max subtraction) over a vector.
    pub fn softmax(&mut self, x: VarId) -> VarId {
        let xv = self.value(x);
        assert!(!xv.is_empty(), "softmax over empty vector");
        let max = xv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.data().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data = exps.into_iter().map(|e| e / sum).collect();
        self.push(Op::Softmax { x }, Tensor::vector(data))
    }

    /// log(sum(exp(x))) with max subtraction; scalar output.
    pub fn log_sum_exp(&mut self, x: VarId) -> VarId {
        let xv = self.value(x);
        let max = xv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xv.data().iter().map(|v| (v - max).exp()).sum();
        self.push(Op::LogSumExp { x }, Tensor::scalar(max + sum.ln()))
    }

    pub fn pick(&mut self, x: VarId, index: usize) -> VarId {
        let v = self.value(x).at(index);
        self.push(Op::Pick { x, index }, Tensor::scalar(v))
    }

    pub fn dot(&mut self, a: VarId, b: VarId) -> VarId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(
            av.len(),
            bv.len(),
            "dot shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let v = crate::nn::tensor::dot(av.data(), bv.data());
        self.push(Op::Dot { a, b }, Tensor::scalar(v))
    }

    /// Cosine similarity of two vectors; scalar output.
    pub fn cosine_similarity(&mut self, a: VarId, b: VarId) -> VarId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.len(), bv.len(), "cosine_similarity shape mismatch");
        let na = crate::nn::tensor::l2_norm(av.data());
        let nb = crate::nn::tensor::l2_norm(bv.data());
        let value = if na == 0.0 || nb == 0.0 {
            f64::NAN // poisons the tape through the finiteness check
        } else {
            crate::nn::tensor::dot(av.data(), bv.data()) / (na * nb)
        };
        self.push(Op::CosineSim { a, b }, Tensor::scalar(value))
    }

    /// -(1-y)·ln(1-λ) - y·ln(λ) for λ in (0,1) and constant y.
    pub fn cross_entropy_bernoulli(&mut self, lambda: VarId, target: f64) -> VarId {
        let l = self.value(lambda).at(0);
        let value = -(1.0 - target) * (1.0 - l).ln() - target * l.ln();
        self.push(
            Op::BernoulliCrossEntropy { lambda, target },
            Tensor::scalar(value),
        )
    }

    /// Σ w_i · x_i over scalar variables with constant weights.
    pub fn weighted_sum(&mut self, terms: &[(VarId, f64)]) -> VarId {
        let mut total = 0.0;
        for &(v, w) in terms {
            debug_assert_eq!(self.value(v).len(), 1);
            total += w * self.value(v).at(0);
        }
        self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            Tensor::scalar(total),
        )
    }

    /// log of entry `index` of softmax(logits), computed stably.
    pub fn log_prob(&mut self, logits: VarId, index: usize) -> VarId {
        let picked = self.pick(logits, index);
        let lse = self.log_sum_exp(logits);
        self.sub(picked, lse)
    }

    /// Entropy of softmax(logits): logsumexp(x) - probs·x.
    pub fn entropy(&mut self, logits: VarId, probs: VarId) -> VarId {
        let lse = self.log_sum_exp(logits);
        let px = self.dot(probs, logits);
        self.sub(lse, px)
    }

    /// Reverse pass from a scalar root. Parameter gradients are scaled by
    /// `seed` and accumulated into `grads` for ids passing `mask` (None =
    /// all). Adjoint state is local to each call, so several backward passes
    /// may run over one tape.
    pub fn backward(
        &self,
        root: VarId,
        seed: f64,
        mask: Option<&[bool]>,
        grads: &mut [Tensor],
    ) -> Result<()> {
        self.check_healthy()?;
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(Tensor::scalar(seed));

        for i in (0..=root.0).rev() {
            let a = match adj[i].take() {
                Some(a) => a,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => {
                    if mask.map_or(true, |m| m[*id]) {
                        accumulate(&mut grads[*id], a.data(), 1.0);
                    }
                }
                Op::GatherRow { id, row } => {
                    if mask.map_or(true, |m| m[*id]) {
                        let cols = grads[*id].cols();
                        let dst = &mut grads[*id].data_mut()[row * cols..(row + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(a.data()) {
                            *d += s;
                        }
                    }
                }
                Op::MatVecParam { id, x } => {
                    let xv = self.value(*x).data().to_vec();
                    if mask.map_or(true, |m| m[*id]) {
                        let cols = grads[*id].cols();
                        let g = grads[*id].data_mut();
                        for (r, ar) in a.data().iter().enumerate() {
                            if *ar != 0.0 {
                                for (c, xc) in xv.iter().enumerate() {
                                    g[r * cols + c] += ar * xc;
                                }
                            }
                        }
                    }
                    let m = self.values.value(*id);
                    let mut dx = vec![0.0; xv.len()];
                    for (r, ar) in a.data().iter().enumerate() {
                        if *ar != 0.0 {
                            for (c, d) in dx.iter_mut().enumerate() {
                                *d += ar * m.row(r)[c];
                            }
                        }
                    }
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Add { a: pa, b: pb } => {
                    add_adjoint(&mut adj, *pa, a.data(), self);
                    add_adjoint(&mut adj, *pb, a.data(), self);
                }
                Op::Sub { a: pa, b: pb } => {
                    add_adjoint(&mut adj, *pa, a.data(), self);
                    let neg: Vec<f64> = a.data().iter().map(|v| -v).collect();
                    add_adjoint(&mut adj, *pb, &neg, self);
                }
                Op::Mul { a: pa, b: pb } => {
                    let bv = self.value(*pb).data();
                    let da: Vec<f64> = a.data().iter().zip(bv).map(|(g, v)| g * v).collect();
                    add_adjoint(&mut adj, *pa, &da, self);
                    let av = self.value(*pa).data();
                    let db: Vec<f64> = a.data().iter().zip(av).map(|(g, v)| g * v).collect();
                    add_adjoint(&mut adj, *pb, &db, self);
                }
                Op::ScaleConst { x, k } => {
                    let dx: Vec<f64> = a.data().iter().map(|v| v * k).collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::ScaleVar { x, s } => {
                    let sv = self.value(*s).at(0);
                    let dx: Vec<f64> = a.data().iter().map(|v| v * sv).collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                    let xv = self.value(*x).data();
                    let ds = crate::nn::tensor::dot(a.data(), xv);
                    add_adjoint(&mut adj, *s, &[ds], self);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_adjoint(&mut adj, p, &a.data()[offset..offset + len], self);
                        offset += len;
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    let dx: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x).data();
                    let dx: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { g * slope })
                        .collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Sigmoid { x } => {
                    let yv = self.nodes[i].value.data();
                    let dx: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(yv)
                        .map(|(g, &y)| g * y * (1.0 - y))
                        .collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Tanh { x } => {
                    let yv = self.nodes[i].value.data();
                    let dx: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(yv)
                        .map(|(g, &y)| g * (1.0 - y * y))
                        .collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Softmax { x } => {
                    let yv = self.nodes[i].value.data();
                    let ay = crate::nn::tensor::dot(a.data(), yv);
                    let dx: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(yv)
                        .map(|(g, &y)| y * (g - ay))
                        .collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::LogSumExp { x } => {
                    let g = a.at(0);
                    let xv = self.value(*x).data();
                    let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let dx: Vec<f64> = exps.iter().map(|e| g * e / sum).collect();
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[*index] = a.at(0);
                    add_adjoint(&mut adj, *x, &dx, self);
                }
                Op::Dot { a: pa, b: pb } => {
                    let g = a.at(0);
                    let bv: Vec<f64> = self.value(*pb).data().iter().map(|v| g * v).collect();
                    add_adjoint(&mut adj, *pa, &bv, self);
                    let av: Vec<f64> = self.value(*pa).data().iter().map(|v| g * v).collect();
                    add_adjoint(&mut adj, *pb, &av, self);
                }
                Op::CosineSim { a: pa, b: pb } => {
                    let g = a.at(0);
                    let av = self.value(*pa).data();
                    let bv = self.value(*pb).data();
                    let na = crate::nn::tensor::l2_norm(av);
                    let nb = crate::nn::tensor::l2_norm(bv);
                    let c = self.nodes[i].value.at(0);
                    let da: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(&x, &y)| g * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    let db: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(&x, &y)| g * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    add_adjoint(&mut adj, *pa, &da, self);
                    add_adjoint(&mut adj, *pb, &db, self);
                }
                Op::BernoulliCrossEntropy { lambda, target } => {
                    let g = a.at(0);
                    let l = self.value(*lambda).at(0);
                    let dl = g * ((1.0 - target) / (1.0 - l) - target / l);
                    add_adjoint(&mut adj, *lambda, &[dl], self);
                }
                Op::WeightedSum { terms } => {
                    let g = a.at(0);
                    for &(v, w) in terms {
                        add_adjoint(&mut adj, v, &[g * w], self);
                    }
                }
            }
        }
        Ok(())
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(dst: &mut Tensor, src: &[f64], scale: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn add_adjoint(adj: &mut [Option<Tensor>], target: VarId, delta: &[f64], tape: &Tape) {
    let slot = &mut adj[target.0];
    match slot {
        Some(t) => {
            for (d, s) in t.data_mut().iter_mut().zip(delta) {
                *d += s;
            }
        }
        None => {
            let mut t = Tensor::zeros(tape.value(target).shape());
            for (d, s) in t.data_mut().iter_mut().zip(delta) {
                *d += s;
            }
            *slot = Some(t);
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Const => "const",
        Op::Param(_) => "param",
        Op::GatherRow { .. } => "gather_row",
        Op::MatVecParam { .. } => "matvec",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::ScaleConst { .. } => "scale",
        Op::ScaleVar { .. } => "scale_var",
        Op::Concat { .. } => "concat",
        Op::Relu { .. } => "relu",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Softmax { .. } => "softmax",
        Op::LogSumExp { .. } => "log_sum_exp",
        Op::Pick { .. } => "pick",
        Op::Dot { .. } => "dot",
        Op::CosineSim { .. } => "cosine_similarity",
        Op::BernoulliCrossEntropy { .. } => "cross_entropy_bernoulli",
        Op::WeightedSum { .. } => "weighted_sum",
    }
}
