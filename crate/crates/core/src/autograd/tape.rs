use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive logit for masked-out attention keys.
pub const MASK_LOGIT: f64 = -1e9;
/// Probabilities are clamped to this before the log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBroadcast(Var, Var),
    MaskRows(Var, Vec<f64>),
    MatMul(Var, Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Dropout(Var, Vec<f64>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    WeightedSum(Var, Vec<f64>),
    CrossEntropy {
        probs: Var,
        /// (row, class, weight / n_active)
        terms: Vec<(usize, usize, f64)>,
    },
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBroadcast(a, b) | MatMul(a, b) => vec![a, b],
            Scale(a, _) | MaskRows(a, _) | Reshape(a) | Softmax(a) | Gelu(a) | Tanh(a) => vec![a],
            Dropout(a, _) | WeightedSum(a, _) | Sum(a) => vec![a],
            LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Embedding { table, .. } => vec![table],
            Attention { q, k, v, .. } => vec![q, k, v],
            CrossEntropy { probs, .. } => vec![probs],
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    is_param: bool,
}

/// Records every operation of one forward pass so [`Tape::backward`] can
/// replay it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the trainable leaves, keyed by their handle.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.map.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.map.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("non-scalar shape")
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient on backward.
    pub fn param(&mut self, t: Tensor) -> Var {
        let (shape, value) = (t.shape().to_vec(), t.into_data());
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            needs_grad: true,
            is_param: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let (shape, value) = (t.shape().to_vec(), t.into_data());
        self.push(shape, value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are consistent")
    }

    /// Post-softmax attention weights `[batch, heads, S, S]` of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&[f64], usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, heads, .. } => Some((probs, *heads)),
            _ => None,
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, s))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (a bias row, a
    /// positional table), repeated over the leading axes.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        let block = self.value(b);
        let value = self
            .value(a)
            .chunks(block.len())
            .flat_map(|c| c.iter().zip(block).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(sa.to_vec(), value, Op::AddBroadcast(a, b)))
    }

    /// Multiplies every last-axis row of `x` by the matching entry of `mask`.
    pub fn mask_rows(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let d = last_dim(self.shape(x));
        if mask.len() * d != self.value(x).len() {
            return Err(Error::shape(format!(
                "row mask of {} for shape {:?}",
                mask.len(),
                self.shape(x)
            )));
        }
        let value = self
            .value(x)
            .chunks(d)
            .zip(&mask)
            .flat_map(|(row, &m)| row.iter().map(move |v| v * m))
            .collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::MaskRows(x, mask)))
    }

    /// `a [..., m, k] · b [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || last_dim(&sa) != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} · {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = numel(&sa) / k;
        let mut out = vec![0.0; m * n];
        gemm(
            View::dense(self.value(a), m, k),
            View::dense(self.value(b), k, n),
            &mut out,
            0.0,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMul(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::shape(format!(
                "reshape {:?} to {shape:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a)))
    }

    /// Row-wise softmax over the last axis, shifted by the row max.
    pub fn softmax(&mut self, a: Var) -> Var {
        let d = last_dim(self.shape(a));
        let mut value = self.value(a).to_vec();
        value.chunks_mut(d).for_each(softmax_in_place);
        self.push(self.shape(a).to_vec(), value, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = last_dim(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape(format!(
                "layer norm over {d} with gain {:?} bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| x * gelu_cdf(x)).collect();
        self.push(self.shape(a).to_vec(), value, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), value, Op::Tanh(a))
    }

    /// Gathers rows of `table [V, d]`; output shape is `ids_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 || numel(ids_shape) != ids.len() {
            return Err(Error::shape(format!(
                "embedding table {ts:?}, ids {ids_shape:?}"
            )));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::OutOfRange {
                index: bad as usize,
                size: v,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i as usize * d..(i as usize + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        Ok(self.push(
            shape,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Inverted dropout. Identity (no node recorded) when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::Dropout(x, mask)))
    }

    /// Scaled dot-product attention over `[batch, S, d]` projections split into
    /// `heads` slices of the last axis. Keys with `key_mask == 0` get
    /// [`MASK_LOGIT`] added before the softmax. Output is `[batch, S, d]` with
    /// heads concatenated.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[u8],
        heads: usize,
    ) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 || heads == 0 || !shape[2].is_multiple_of(heads) {
            return Err(Error::shape(format!(
                "attention over {shape:?} with {heads} heads"
            )));
        }
        let (bsz, s, d) = (shape[0], shape[1], shape[2]);
        if key_mask.len() != bsz * s {
            return Err(Error::shape(format!(
                "attention mask of {} for batch {bsz} x {s}",
                key_mask.len()
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0; bsz * s * d];
        let mut probs = vec![0.0; bsz * heads * s * s];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..s {
                    let qi = &qv[(b * s + i) * d + off..][..dh];
                    let row = &mut probs[((b * heads + h) * s + i) * s..][..s];
                    for (j, r) in row.iter_mut().enumerate() {
                        let kj = &kv[(b * s + j) * d + off..][..dh];
                        let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                        *r = dot * scale
                            + if key_mask[b * s + j] == 0 {
                                MASK_LOGIT
                            } else {
                                0.0
                            };
                    }
                    softmax_in_place(row);
                    let oi = &mut out[(b * s + i) * d + off..][..dh];
                    for (j, &p) in row.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let vj = &vv[(b * s + j) * d + off..][..dh];
                        oi.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
                    }
                }
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        ))
    }

    /// `out[b] = Σ_s weights[b, s] · x[b, s, :]` for `x [batch, S, d]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || weights.len() != shape[0] * shape[1] {
            return Err(Error::shape(format!(
                "weighted sum of {shape:?} with {} weights",
                weights.len()
            )));
        }
        let (bsz, s, d) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let mut out = vec![0.0; bsz * d];
        for b in 0..bsz {
            for t in 0..s {
                let w = weights[b * s + t];
                if w == 0.0 {
                    continue;
                }
                let src = &xv[(b * s + t) * d..][..d];
                out[b * d..(b + 1) * d]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, x)| *o += w * x);
            }
        }
        Ok(self.push(vec![bsz, d], out, Op::WeightedSum(x, weights)))
    }

    /// Mean over rows with `mask == 1` of `-w[label] · ln(max(p[label], 1e-12))`
    /// for a probability matrix `[N, C]`.
    pub fn masked_cross_entropy(
        &mut self,
        probs: Var,
        labels: &[u8],
        mask: &[u8],
        class_weights: &[f64],
    ) -> Result<Var> {
        let shape = self.shape(probs);
        if shape.len() != 2 || labels.len() != shape[0] || mask.len() != shape[0] {
            return Err(Error::shape(format!(
                "cross-entropy over {shape:?} with {} labels / {} mask",
                labels.len(),
                mask.len()
            )));
        }
        let c = shape[1];
        if class_weights.len() != c || labels.iter().any(|&l| l as usize >= c) {
            return Err(Error::shape(format!(
                "labels or class weights do not fit {c} classes"
            )));
        }
        let active = mask.iter().filter(|&&m| m == 1).count();
        if active == 0 {
            return Err(Error::invalid("cross-entropy over an all-masked input"));
        }
        let pv = self.value(probs);
        let mut loss = 0.0;
        let mut terms = Vec::with_capacity(active);
        for (i, (&y, _)) in labels
            .iter()
            .zip(mask)
            .enumerate()
            .filter(|(_, (_, &m))| m == 1)
        {
            let w = class_weights[y as usize];
            let p = pv[i * c + y as usize];
            // f64::max would swallow a NaN
            loss -= w * if p.is_nan() { p } else { p.max(PROB_FLOOR) }.ln();
            terms.push((i, y as usize, w / active as f64));
        }
        Ok(self.push(
            vec![1],
            vec![loss / active as f64],
            Op::CrossEntropy { probs, terms },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape and returns a
    /// gradient (zero if unused) for every leaf created with [`Tape::param`].
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let Some(ln) = nodes.get(loss.0) else {
            return Err(Error::invalid("loss is not recorded on this tape"));
        };
        if ln.value.len() != 1 {
            return Err(Error::shape(format!(
                "loss must be scalar, got {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop(&nodes, &mut grads, node, &g);
        }

        let mut map = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.is_param {
                let data = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                map.insert(Var(i), Tensor::new(node.shape.clone(), data)?);
            }
        }
        Ok(Gradients { map })
    }
}

/// Adds into the gradient buffer of `v` if `v` participates in differentiation.
fn accum(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(buf);
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            });
            accum(nodes, grads, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            });
        }
        Op::Sub(a, b) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            });
            accum(nodes, grads, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accum(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accum(nodes, grads, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(a, s) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
            });
        }
        Op::AddBroadcast(a, b) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            });
            accum(nodes, grads, *b, |gb| {
                let n = gb.len();
                for chunk in g.chunks(n) {
                    gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                }
            });
        }
        Op::MaskRows(a, mask) => {
            let d = g.len() / mask.len();
            accum(nodes, grads, *a, |ga| {
                for (r, &m) in mask.iter().enumerate() {
                    for j in r * d..(r + 1) * d {
                        ga[j] += m * g[j];
                    }
                }
            });
        }
        Op::MatMul(a, b) => {
            let sb = &nodes[b.0].shape;
            let (k, n) = (sb[0], sb[1]);
            let m = g.len() / n;
            let dc = View::dense(g, m, n);
            let (av, bv) = (val(*a), val(*b));
            accum(nodes, grads, *a, |ga| {
                gemm(dc, View::dense(bv, k, n).t(), ga, 1.0)
            });
            accum(nodes, grads, *b, |gb| {
                gemm(View::dense(av, m, k).t(), dc, gb, 1.0)
            });
        }
        Op::Reshape(a) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            });
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let d = last_dim(&node.shape);
            accum(nodes, grads, *a, |ga| {
                for r in 0..y.len() / d {
                    let (yr, gr) = (&y[r * d..][..d], &g[r * d..][..d]);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..d {
                        ga[r * d + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = last_dim(&node.shape);
            let gv = val(*gain);
            accum(nodes, grads, *gain, |gg| {
                for (r, h) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += r[j] * h[j];
                    }
                }
            });
            accum(nodes, grads, *bias, |gb| {
                for r in g.chunks(d) {
                    gb.iter_mut().zip(r).for_each(|(x, y)| *x += y);
                }
            });
            accum(nodes, grads, *x, |gx| {
                let mut dxhat = vec![0.0; d];
                for (r, &is) in inv_std.iter().enumerate() {
                    let h = &xhat[r * d..][..d];
                    let gr = &g[r * d..][..d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * gv[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh = dxhat.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] += is * (dxhat[j] - mean_d - h[j] * mean_dh);
                    }
                }
            });
        }
        Op::Gelu(a) => {
            let av = val(*a);
            accum(nodes, grads, *a, |ga| {
                let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
                for i in 0..g.len() {
                    let x = av[i];
                    let pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
                    ga[i] += g[i] * (gelu_cdf(x) + x * pdf);
                }
            });
        }
        Op::Tanh(a) => {
            let y = &node.value;
            accum(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Embedding { table, ids } => {
            let d = last_dim(&node.shape);
            accum(nodes, grads, *table, |gt| {
                for (n, &id) in ids.iter().enumerate() {
                    let row = &mut gt[id as usize * d..][..d];
                    row.iter_mut()
                        .zip(&g[n * d..][..d])
                        .for_each(|(x, y)| *x += y);
                }
            });
        }
        Op::Dropout(a, mask) => {
            accum(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * mask[i];
                }
            });
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } => attention_backward(nodes, grads, node, g, (*q, *k, *v), *heads, probs),
        Op::WeightedSum(x, weights) => {
            let shape = &nodes[x.0].shape;
            let (s, d) = (shape[1], shape[2]);
            accum(nodes, grads, *x, |gx| {
                for (bt, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let b = bt / s;
                    let src = &g[b * d..][..d];
                    gx[bt * d..][..d]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, y)| *o += w * y);
                }
            });
        }
        Op::CrossEntropy { probs, terms } => {
            let c = nodes[probs.0].shape[1];
            let pv = val(*probs);
            accum(nodes, grads, *probs, |gp| {
                for &(i, y, w) in terms {
                    let p = pv[i * c + y];
                    if p > PROB_FLOOR {
                        gp[i * c + y] -= g[0] * w / p;
                    }
                }
            });
        }
        Op::Sum(a) => {
            accum(nodes, grads, *a, |ga| {
                ga.iter_mut().for_each(|x| *x += g[0])
            });
        }
    }
}

fn attention_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    node: &Node,
    g: &[f64],
    (q, k, v): (Var, Var, Var),
    heads: usize,
    probs: &[f64],
) {
    let (bsz, s, d) = (node.shape[0], node.shape[1], node.shape[2]);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let mut dq = vec![0.0; qv.len()];
    let mut dk = vec![0.0; kv.len()];
    let mut dv = vec![0.0; vv.len()];
    let mut dp = vec![0.0; s];
    for b in 0..bsz {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..s {
                let row = &probs[((b * heads + h) * s + i) * s..][..s];
                let go = &g[(b * s + i) * d + off..][..dh];
                for j in 0..s {
                    let vj = &vv[(b * s + j) * d + off..][..dh];
                    dp[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let p = row[j];
                    if p != 0.0 {
                        let dvj = &mut dv[(b * s + j) * d + off..][..dh];
                        dvj.iter_mut().zip(go).for_each(|(o, x)| *o += p * x);
                    }
                }
                let dot: f64 = row.iter().zip(&dp).map(|(p, x)| p * x).sum();
                let qi_base = (b * s + i) * d + off;
                for j in 0..s {
                    let ds = row[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_base = (b * s + j) * d + off;
                    for t in 0..dh {
                        dq[qi_base + t] += ds * kv[kj_base + t];
                        dk[kj_base + t] += ds * qv[qi_base + t];
                    }
                }
            }
        }
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        accum(nodes, grads, var, |gx| {
            gx.iter_mut().zip(&buf).for_each(|(x, y)| *x += y)
        });
    }
}
