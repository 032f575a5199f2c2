//! Reverse-mode autodiff tape.
//!
//! Nodes are appended in execution order and never mutated afterwards;
//! `backward` walks them strictly in reverse and sums each node's gradient
//! over all of its consumers.

use super::layer::Activation;
use super::linalg::{self, gemm, gemm_strided, Mat};
use super::{NumericsError, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// GRU parameters: gate blocks stacked in z, r, h order.
///
/// `w` is `[3m × n]`, `u` is `[3m × m]`, `b` is `[3m]`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// `out = a1 ∘ tanh(W1 x + b1) + a2 ∘ tanh(W2 x + b2)`.
#[derive(Clone, Copy, Debug)]
pub struct DualFcVars {
    pub w1: Var,
    pub w2: Var,
    pub b1: Var,
    pub b2: Var,
    pub a1: Var,
    pub a2: Var,
}

struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    hc: Vec<f64>,
    rh: Vec<f64>,
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Activation {
        x: Var,
        act: Activation,
    },
    Gru {
        x: Var,
        h0: Var,
        p: GruVars,
        cache: GruCache,
    },
    Embedding {
        table: Var,
        levels: Vec<usize>,
    },
    DualFc {
        x: Var,
        p: DualFcVars,
        t1: Vec<f64>,
        t2: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    ReflectPad {
        x: Var,
        left: usize,
    },
    Transpose {
        x: Var,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Single-threaded record of differentiable operations.
///
/// A tape is `Send`: independent tapes may run on separate threads, with
/// gradients merged by the caller.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    flip_dense_sign: bool,
}

/// Source index for padded position `p` under reflection (edge excluded).
pub fn reflect_index(p: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = p.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn shape_err(op: &'static str, what: &'static str, expected: usize, got: usize) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        what,
        expected,
        got,
    }
}

fn check(op: &'static str, what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(shape_err(op, what, expected, got))
    }
}

/// Output shape for a row-wise op: vectors stay vectors.
fn row_shape(input: &Tensor, cols: usize) -> Vec<usize> {
    if input.rank() == 1 {
        vec![cols]
    } else {
        vec![input.rows(), cols]
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

    /// Test fixture: negate every gradient the dense kernel emits.
    #[doc(hidden)]
    pub fn plant_dense_sign_flip(&mut self) {
        self.flip_dense_sign = true;
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| NumericsError::Tape(format!("unknown variable #{}", v.0)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    /// Gradient from the most recent `backward`. Errors if backward has not
    /// run or the variable was not reached by it.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        let node = self.node(v)?;
        node.grad.as_deref().ok_or_else(|| {
            NumericsError::Tape(format!(
                "no gradient for variable #{} (backward not run or variable not on the path)",
                v.0
            ))
        })
    }

    /// Gradient, or zeros of the right size if the variable received none.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.len()])
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn softmax_probs(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes.get(loss.0)?.op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    // ----------------------------------------------------------------- ops

    /// Valid 1-D convolution: `x [C_in × L]`, `w [C_out × C_in × k]`, `b [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        const OP: &str = "conv1d";
        let (xv, wv, bv) = (self.try_value(x)?, self.try_value(w)?, self.try_value(b)?);
        if xv.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: xv.shape().to_vec(),
            });
        }
        if wv.rank() != 3 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: wv.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(NumericsError::InvalidHyperparameter {
                op: OP,
                detail: "stride must be >= 1".into(),
            });
        }
        let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
        check(OP, "kernel input channels", c_in, wv.shape()[1])?;
        check(OP, "bias length", c_out, bv.len())?;
        if len < k {
            return Err(NumericsError::InputTooShort {
                op: OP,
                len,
                need: k,
            });
        }
        let l_out = (len - k) / stride + 1;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; c_out * l_out];
        for c in 0..c_out {
            let wc = &wd[c * c_in * k..(c + 1) * c_in * k];
            for t in 0..l_out {
                let mut acc = bd[c];
                for i in 0..c_in {
                    let xs = &xd[i * len + t * stride..i * len + t * stride + k];
                    acc += linalg::dot(&wc[i * k..(i + 1) * k], xs);
                }
                out[c * l_out + t] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, l_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride }, &[x, w, b]))
    }

    /// Non-overlapping max pooling along time; ties resolve to the first index.
    pub fn maxpool1d(&mut self, x: Var, width: usize) -> Result<Var> {
        const OP: &str = "maxpool1d";
        let xv = self.try_value(x)?;
        if xv.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: xv.shape().to_vec(),
            });
        }
        if width == 0 {
            return Err(NumericsError::InvalidHyperparameter {
                op: OP,
                detail: "width must be >= 1".into(),
            });
        }
        let (c, len) = (xv.shape()[0], xv.shape()[1]);
        if len < width {
            return Err(NumericsError::InputTooShort {
                op: OP,
                len,
                need: width,
            });
        }
        let l_out = len / width;
        let xd = xv.data();
        let mut out = Vec::with_capacity(c * l_out);
        let mut argmax = Vec::with_capacity(c * l_out);
        for ch in 0..c {
            for t in 0..l_out {
                let start = ch * len + t * width;
                let mut best = start;
                for i in start + 1..start + width {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, l_out], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// `act(x Wᵀ + b)` applied to a vector `[n]` or to every row of `[T × n]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        const OP: &str = "dense";
        let (xv, wv, bv) = (self.try_value(x)?, self.try_value(w)?, self.try_value(b)?);
        if wv.rank() != 2 || xv.rank() > 2 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: wv.shape().to_vec(),
            });
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        check(OP, "input width", n, xv.cols())?;
        check(OP, "bias length", m, bv.len())?;
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            out.extend_from_slice(bv.data());
        }
        gemm(
            1.0,
            Mat::new(xv.data(), rows, n),
            Mat::new(wv.data(), m, n).t(),
            1.0,
            &mut out,
        );
        for v in &mut out {
            *v = act.apply(*v);
        }
        let value = Tensor::new(row_shape(xv, m), out)?;
        Ok(self.push(value, Op::Dense { x, w, b, act }, &[x, w, b]))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let xv = self.try_value(x)?;
        let data = xv.data().iter().map(|&v| act.apply(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Activation { x, act }, &[x]))
    }

    /// One GRU update: `x [n]`, `h_prev [m]` → `h_new [m]`.
    pub fn gru_step(&mut self, x: Var, h_prev: Var, p: GruVars) -> Result<Var> {
        let xv = self.try_value(x)?;
        if xv.rank() != 1 {
            return Err(NumericsError::InvalidShape {
                op: "gru_step",
                shape: xv.shape().to_vec(),
            });
        }
        self.gru_impl(x, h_prev, p, true)
    }

    /// Runs a GRU over the rows of `xs [T × n]` from `h0 [m]`; returns all
    /// hidden states `[T × m]`.
    pub fn gru_sequence(&mut self, xs: Var, h0: Var, p: GruVars) -> Result<Var> {
        self.gru_impl(xs, h0, p, false)
    }

    fn gru_impl(&mut self, x: Var, h0: Var, p: GruVars, single: bool) -> Result<Var> {
        const OP: &str = "gru";
        let xv = self.try_value(x)?;
        let hv = self.try_value(h0)?;
        let (wv, uv, bv) = (
            self.try_value(p.w)?,
            self.try_value(p.u)?,
            self.try_value(p.b)?,
        );
        let m = hv.len();
        if wv.rank() != 2 || uv.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: wv.shape().to_vec(),
            });
        }
        let n = wv.shape()[1];
        check(OP, "input weight rows (3·hidden)", 3 * m, wv.shape()[0])?;
        check(OP, "input width", n, xv.cols())?;
        check(OP, "recurrent weight rows (3·hidden)", 3 * m, uv.shape()[0])?;
        check(OP, "recurrent weight cols", m, uv.shape()[1])?;
        check(OP, "bias length (3·hidden)", 3 * m, bv.len())?;
        let t_len = xv.rows();
        let (h, cache) = gru_forward(xv.data(), t_len, n, hv.data(), wv.data(), uv.data(), bv.data());
        let shape = if single { vec![m] } else { vec![t_len, m] };
        let value = Tensor::new(shape, h)?;
        Ok(self.push(
            value,
            Op::Gru {
                x,
                h0,
                p,
                cache,
            },
            &[x, h0, p.w, p.u, p.b],
        ))
    }

    /// Rows of `table [V × d]` selected by `levels`; output `[levels.len() × d]`.
    pub fn embedding(&mut self, table: Var, levels: &[usize]) -> Result<Var> {
        let tv = self.try_value(table)?;
        if tv.rank() != 2 || levels.is_empty() {
            return Err(NumericsError::InvalidShape {
                op: "embedding",
                shape: tv.shape().to_vec(),
            });
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(levels.len() * d);
        for &l in levels {
            if l >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: l,
                    bound: vocab,
                });
            }
            out.extend_from_slice(&tv.data()[l * d..(l + 1) * d]);
        }
        let value = Tensor::new(vec![levels.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                levels: levels.to_vec(),
            },
            &[table],
        ))
    }

    /// Single-row lookup returning a `[d]` vector.
    pub fn embedding_lookup(&mut self, table: Var, level: usize) -> Result<Var> {
        let rows = self.embedding(table, &[level])?;
        let d = self.value(rows).cols();
        // Reshape through a one-part concat so the result is rank 1.
        let value = Tensor::vector(self.value(rows).data().to_vec());
        debug_assert_eq!(value.len(), d);
        Ok(self.push(value, Op::ConcatCols { parts: vec![rows] }, &[rows]))
    }

    pub fn dualfc(&mut self, x: Var, p: DualFcVars) -> Result<Var> {
        const OP: &str = "dualfc";
        let xv = self.try_value(x)?;
        let w1 = self.try_value(p.w1)?;
        if w1.rank() != 2 || xv.rank() > 2 {
            return Err(NumericsError::InvalidShape {
                op: OP,
                shape: w1.shape().to_vec(),
            });
        }
        let (m, n) = (w1.shape()[0], w1.shape()[1]);
        check(OP, "input width", n, xv.cols())?;
        check(OP, "w2 size", m * n, self.try_value(p.w2)?.len())?;
        for (what, v) in [("b1", p.b1), ("b2", p.b2), ("a1", p.a1), ("a2", p.a2)] {
            check(OP, what, m, self.try_value(v)?.len())?;
        }
        let rows = xv.rows();
        let branch = |w: Var, b: Var| {
            let mut pre = Vec::with_capacity(rows * m);
            for _ in 0..rows {
                pre.extend_from_slice(self.value(b).data());
            }
            gemm(
                1.0,
                Mat::new(xv.data(), rows, n),
                Mat::new(self.value(w).data(), m, n).t(),
                1.0,
                &mut pre,
            );
            for v in &mut pre {
                *v = v.tanh();
            }
            pre
        };
        let t1 = branch(p.w1, p.b1);
        let t2 = branch(p.w2, p.b2);
        let (a1, a2) = (self.value(p.a1).data(), self.value(p.a2).data());
        let out: Vec<f64> = (0..rows * m)
            .map(|i| a1[i % m] * t1[i] + a2[i % m] * t2[i])
            .collect();
        let value = Tensor::new(row_shape(xv, m), out)?;
        Ok(self.push(
            value,
            Op::DualFc { x, p, t1, t2 },
            &[x, p.w1, p.w2, p.b1, p.b2, p.a1, p.a2],
        ))
    }

    /// Mean cross-entropy of `softmax(logits)` against integer targets, one
    /// per row of `logits [T × V]` (or a single `[V]` vector). Scalar output.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let lv = self.try_value(logits)?;
        let (rows, vocab) = (lv.rows(), lv.cols());
        check(OP, "target count", rows, targets.len())?;
        if !lv.is_finite() {
            return Err(NumericsError::NonFinite { op: OP });
        }
        let mut probs = Vec::with_capacity(rows * vocab);
        let mut loss = 0.0;
        for (row, &target) in lv.data().chunks_exact(vocab).zip(targets) {
            if target >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: OP,
                    index: target,
                    bound: vocab,
                });
            }
            let p = softmax(row);
            loss -= p[target].ln();
            probs.extend(p);
        }
        loss /= rows as f64;
        if !loss.is_finite() {
            return Err(NumericsError::NonFinite { op: OP });
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reflect-pads `x [C × L]` along time (edge sample not repeated).
    pub fn reflect_pad(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let xv = self.try_value(x)?;
        if xv.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                op: "reflect_pad",
                shape: xv.shape().to_vec(),
            });
        }
        let (c, len) = (xv.shape()[0], xv.shape()[1]);
        let out_len = len + left + right;
        let mut out = Vec::with_capacity(c * out_len);
        for ch in 0..c {
            let row = &xv.data()[ch * len..(ch + 1) * len];
            for p in 0..out_len {
                out.push(row[reflect_index(p as isize - left as isize, len)]);
            }
        }
        let value = Tensor::new(vec![c, out_len], out)?;
        Ok(self.push(value, Op::ReflectPad { x, left }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.try_value(x)?;
        if xv.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                op: "transpose",
                shape: xv.shape().to_vec(),
            });
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let value = Tensor::new(vec![c, r], transpose(xv.data(), r, c))?;
        Ok(self.push(value, Op::Transpose { x }, &[x]))
    }

    /// `out[t] = x[t / times]` for `x [n × d]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let xv = self.try_value(x)?;
        if times == 0 || xv.rank() != 2 {
            return Err(NumericsError::InvalidHyperparameter {
                op: "repeat_rows",
                detail: format!("times={times}, shape={:?}", xv.shape()),
            });
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(n * times * d);
        for row in xv.data().chunks_exact(d) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let value = Tensor::new(vec![n * times, d], out)?;
        Ok(self.push(value, Op::RepeatRows { x, times }, &[x]))
    }

    /// Concatenates along the last axis. All parts share the row count;
    /// vectors concatenate into a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NumericsError::Tape("concat of zero parts".into()));
        }
        let first = self.try_value(parts[0])?;
        let rows = first.rows();
        let all_vectors = first.rank() == 1;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.try_value(p)?;
            check("concat_cols", "row count", rows, pv.rows())?;
            if (pv.rank() == 1) != all_vectors {
                return Err(NumericsError::InvalidShape {
                    op: "concat_cols",
                    shape: pv.shape().to_vec(),
                });
            }
            widths.push(pv.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if all_vectors {
            vec![total]
        } else {
            vec![rows, total]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.try_value(a)?, self.try_value(b)?);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", "element count", av.len(), bv.len()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    // ------------------------------------------------------------ backward

    /// Backpropagates from a scalar output with seed gradient 1.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let len = self.node(out)?.value.len();
        if len != 1 {
            return Err(NumericsError::Tape(format!(
                "backward needs a scalar output, variable #{} has {len} elements",
                out.0
            )));
        }
        self.backward_with(out, &[1.0])
    }

    /// Backpropagates an arbitrary seed gradient from `out`. Previous
    /// gradients on the tape are discarded.
    pub fn backward_with(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        let len = self.node(out)?.value.len();
        check("backward", "seed length", len, seed.len())?;
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[out.0].grad = Some(seed.to_vec());
        for idx in (0..=out.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                let contributions = self.local_backward(idx, &g);
                for (v, contrib) in contributions {
                    self.accumulate(v, contrib);
                }
            }
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(node.value.len(), contrib.len());
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_backward(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv1d { x, w, b, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let l_out = node.value.shape()[1];
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; c_out];
                for c in 0..c_out {
                    for t in 0..l_out {
                        let gv = g[c * l_out + t];
                        if gv == 0.0 {
                            continue;
                        }
                        db[c] += gv;
                        for i in 0..c_in {
                            let xo = i * len + t * stride;
                            let wo = (c * c_in + i) * k;
                            for j in 0..k {
                                dw[wo + j] += gv * xd[xo + j];
                                dx[xo + j] += gv * wd[wo + j];
                            }
                        }
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                vec![(*x, dx)]
            }
            Op::Dense { x, w, b, act } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let sign = if self.flip_dense_sign { -1.0 } else { 1.0 };
                let dpre: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| sign * gv * act.derivative_from_output(yv))
                    .collect();
                let mut out = Vec::with_capacity(3);
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * n];
                    gemm(1.0, Mat::new(&dpre, rows, m), Mat::new(wv.data(), m, n), 0.0, &mut dx);
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; m * n];
                    gemm(
                        1.0,
                        Mat::new(&dpre, rows, m).t(),
                        Mat::new(xv.data(), rows, n),
                        0.0,
                        &mut dw,
                    );
                    out.push((*w, dw));
                }
                out.push((*b, column_sums(&dpre, m)));
                out
            }
            Op::Activation { x, act } => {
                let dx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * act.derivative_from_output(yv))
                    .collect();
                vec![(*x, dx)]
            }
            Op::Gru { x, h0, p, cache } => self.gru_backward(*x, *h0, *p, cache, y, g),
            Op::Embedding { table, levels } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let mut dt = vec![0.0; tv.len()];
                for (row, &l) in g.chunks_exact(d).zip(levels) {
                    for (a, b) in dt[l * d..(l + 1) * d].iter_mut().zip(row) {
                        *a += b;
                    }
                }
                vec![(*table, dt)]
            }
            Op::DualFc { x, p, t1, t2 } => {
                let xv = self.value(*x);
                let w1 = self.value(p.w1);
                let (m, n) = (w1.shape()[0], w1.shape()[1]);
                let rows = xv.rows();
                let (a1, a2) = (self.value(p.a1).data(), self.value(p.a2).data());
                let mut da1 = vec![0.0; m];
                let mut da2 = vec![0.0; m];
                let mut dp1 = vec![0.0; rows * m];
                let mut dp2 = vec![0.0; rows * m];
                for i in 0..rows * m {
                    let j = i % m;
                    da1[j] += g[i] * t1[i];
                    da2[j] += g[i] * t2[i];
                    dp1[i] = g[i] * a1[j] * (1.0 - t1[i] * t1[i]);
                    dp2[i] = g[i] * a2[j] * (1.0 - t2[i] * t2[i]);
                }
                let mut out = Vec::with_capacity(7);
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * n];
                    gemm(1.0, Mat::new(&dp1, rows, m), Mat::new(w1.data(), m, n), 0.0, &mut dx);
                    gemm(
                        1.0,
                        Mat::new(&dp2, rows, m),
                        Mat::new(self.value(p.w2).data(), m, n),
                        1.0,
                        &mut dx,
                    );
                    out.push((*x, dx));
                }
                for (w, dp) in [(p.w1, &dp1), (p.w2, &dp2)] {
                    let mut dw = vec![0.0; m * n];
                    gemm(
                        1.0,
                        Mat::new(dp, rows, m).t(),
                        Mat::new(xv.data(), rows, n),
                        0.0,
                        &mut dw,
                    );
                    out.push((w, dw));
                }
                out.push((p.b1, column_sums(&dp1, m)));
                out.push((p.b2, column_sums(&dp2, m)));
                out.push((p.a1, da1));
                out.push((p.a2, da2));
                out
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let vocab = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * vocab + t] -= scale;
                }
                vec![(*logits, dl)]
            }
            Op::ReflectPad { x, left } => {
                let xv = self.value(*x);
                let (c, len) = (xv.shape()[0], xv.shape()[1]);
                let out_len = node.value.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for ch in 0..c {
                    for p in 0..out_len {
                        let src = reflect_index(p as isize - *left as isize, len);
                        dx[ch * len + src] += g[ch * out_len + p];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Transpose { x } => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                vec![(*x, transpose(g, r, c))]
            }
            Op::RepeatRows { x, times } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (i, row) in g.chunks_exact(d).enumerate() {
                    let dst = &mut dx[(i / times) * d..(i / times + 1) * d];
                    for (a, b) in dst.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols { parts } => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    out.push((p, dp));
                }
                out
            }
            Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        }
    }

    fn gru_backward(
        &self,
        x: Var,
        h0: Var,
        p: GruVars,
        cache: &GruCache,
        h: &[f64],
        g: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        let xv = self.value(x);
        let h0v = self.value(h0).data();
        let u = self.value(p.u).data();
        let w = self.value(p.w).data();
        let m = h0v.len();
        let n = self.value(p.w).shape()[1];
        let t_len = xv.rows();
        let g3 = 3 * m;
        let (u_zr, u_h) = u.split_at(2 * m * m);

        let mut da = vec![0.0; t_len * g3];
        let mut carry = vec![0.0; m];
        let mut drh = vec![0.0; m];
        for t in (0..t_len).rev() {
            let hp = if t == 0 { h0v } else { &h[(t - 1) * m..t * m] };
            let row = t * m;
            let da_t = &mut da[t * g3..(t + 1) * g3];
            let mut dz = vec![0.0; m];
            for j in 0..m {
                let dh = g[row + j] + carry[j];
                let (z, hc) = (cache.z[row + j], cache.hc[row + j]);
                dz[j] = dh * (hc - hp[j]);
                carry[j] = dh * (1.0 - z);
                da_t[2 * m + j] = dh * z * (1.0 - hc * hc);
            }
            drh.iter_mut().for_each(|v| *v = 0.0);
            linalg::matvec_t_add(u_h, &da_t[2 * m..], &mut drh);
            for j in 0..m {
                let (z, r) = (cache.z[row + j], cache.r[row + j]);
                let dr = drh[j] * hp[j];
                carry[j] += drh[j] * r;
                da_t[j] = dz[j] * z * (1.0 - z);
                da_t[m + j] = dr * r * (1.0 - r);
            }
            linalg::matvec_t_add(u_zr, &da_t[..2 * m], &mut carry);
        }

        let mut out = Vec::with_capacity(5);
        if self.needs(x) {
            let mut dx = vec![0.0; t_len * n];
            gemm(1.0, Mat::new(&da, t_len, g3), Mat::new(w, g3, n), 0.0, &mut dx);
            out.push((x, dx));
        }
        out.push((h0, carry));
        let mut dw = vec![0.0; g3 * n];
        gemm(
            1.0,
            Mat::new(&da, t_len, g3).t(),
            Mat::new(xv.data(), t_len, n),
            0.0,
            &mut dw,
        );
        out.push((p.w, dw));

        let mut hp_all = Vec::with_capacity(t_len * m);
        hp_all.extend_from_slice(h0v);
        hp_all.extend_from_slice(&h[..(t_len - 1) * m]);
        let mut du = vec![0.0; g3 * m];
        gemm_strided(
            1.0,
            Mat::strided(&da, t_len, 2 * m, g3).t(),
            Mat::new(&hp_all, t_len, m),
            0.0,
            &mut du[..2 * m * m],
            m,
        );
        gemm_strided(
            1.0,
            Mat::strided(&da[2 * m..], t_len, m, g3).t(),
            Mat::new(&cache.rh, t_len, m),
            0.0,
            &mut du[2 * m * m..],
            m,
        );
        out.push((p.u, du));
        out.push((p.b, column_sums(&da, g3)));
        out
    }
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut sums = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn gru_forward(
    x: &[f64],
    t_len: usize,
    n: usize,
    h0: &[f64],
    w: &[f64],
    u: &[f64],
    b: &[f64],
) -> (Vec<f64>, GruCache) {
    let m = h0.len();
    let g3 = 3 * m;
    let mut pre = Vec::with_capacity(t_len * g3);
    for _ in 0..t_len {
        pre.extend_from_slice(b);
    }
    gemm(1.0, Mat::new(x, t_len, n), Mat::new(w, g3, n).t(), 1.0, &mut pre);

    let (u_zr, u_h) = u.split_at(2 * m * m);
    let mut h = vec![0.0; t_len * m];
    let mut cache = GruCache {
        z: vec![0.0; t_len * m],
        r: vec![0.0; t_len * m],
        hc: vec![0.0; t_len * m],
        rh: vec![0.0; t_len * m],
    };
    let mut hp = h0.to_vec();
    let mut rec = vec![0.0; 2 * m];
    let mut rec_h = vec![0.0; m];
    for t in 0..t_len {
        let pre_t = &pre[t * g3..(t + 1) * g3];
        let row = t * m;
        rec.iter_mut().for_each(|v| *v = 0.0);
        linalg::matvec_add(u_zr, &hp, &mut rec);
        for j in 0..m {
            let z = linalg::sigmoid(pre_t[j] + rec[j]);
            let r = linalg::sigmoid(pre_t[m + j] + rec[m + j]);
            cache.z[row + j] = z;
            cache.r[row + j] = r;
            cache.rh[row + j] = r * hp[j];
        }
        rec_h.iter_mut().for_each(|v| *v = 0.0);
        linalg::matvec_add(u_h, &cache.rh[row..row + m], &mut rec_h);
        for j in 0..m {
            let hc = (pre_t[2 * m + j] + rec_h[j]).tanh();
            let z = cache.z[row + j];
            cache.hc[row + j] = hc;
            h[row + j] = (1.0 - z) * hp[j] + z * hc;
        }
        hp.copy_from_slice(&h[row..row + m]);
    }
    (h, cache)
}
