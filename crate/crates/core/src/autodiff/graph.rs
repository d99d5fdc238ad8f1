//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so parents always precede children and a reverse
//! sweep over the node list is a reverse topological traversal.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-feature batch statistics computed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    AddBias {
        x: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Relu {
        x: usize,
    },
    Log {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
    },
    GatherRows {
        x: usize,
        index: Vec<usize>,
    },
    GroupMax {
        x: usize,
        argmax: Vec<usize>,
    },
    L2NormRows {
        x: usize,
        norms: Vec<T>,
    },
    MaskedLogSoftmax {
        x: usize,
        probs: Vec<T>,
    },
    Pick {
        x: usize,
        index: Vec<(usize, usize)>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`]; only leaves keep theirs.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `c (+)= op(a) * op(b)` where `a` is `m x k` (stored transposed if `ta`) and `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slice lengths were checked above against the dimensions and strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "node {} produced NaN/Inf",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(t, op, self.needs(x.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::Shape(format!("matmul {m}x{k} by {kb}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
            needs,
        )
    }

    /// `x * w + b` with an optional bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.value(x).dims2()?;
        let (kw, n) = self.value(w).dims2()?;
        if k != kw {
            return Err(Error::Shape(format!("linear {m}x{k} by {kw}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != n {
                return Err(Error::Shape(format!(
                    "bias of {} for {n} outputs",
                    bias.len()
                )));
            }
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            b.is_some(),
        );
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            needs,
        )
    }

    /// Adds a length-`cols` vector to every row (the only broadcast supported).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        let bias = self.value(b).data();
        if bias.len() != n {
            return Err(Error::Shape(format!(
                "bias of {} for {n} columns",
                bias.len()
            )));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let needs = self.needs(x.0) || self.needs(b.0);
        self.push(out, Op::AddBias { x: x.0, b: b.0 }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(out, Op::Add { a: a.0, b: b.0 }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(out, Op::Mul { a: a.0, b: b.0 }, needs)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, |v| v * c, Op::Scale { x: x.0, c })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            Op::Relu { x: x.0 },
        )
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, T::ln, Op::Log { x: x.0 })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, T::exp, Op::Exp { x: x.0 })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, self.needs(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let s: T = xv.data().iter().copied().sum();
        let m = s / T::from_f64(xv.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean { x: x.0 }, self.needs(x.0))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut cols = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::Shape(format!("concat rows {r} vs {rows}")));
            }
            cols.push(c);
        }
        let total: usize = cols.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut offset = 0;
        for (&p, &c) in parts.iter().zip(&cols) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let needs = parts.iter().any(|p| self.needs(p.0));
        let parts = parts.iter().zip(cols).map(|(p, c)| (p.0, c)).collect();
        self.push(
            Tensor::matrix(rows, total, out)?,
            Op::Concat { parts },
            needs,
        )
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Shape(format!("gather index {i} out of {rows} rows")));
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        self.push(
            Tensor::matrix(index.len(), cols, out)?,
            Op::GatherRows {
                x: x.0,
                index: index.to_vec(),
            },
            self.needs(x.0),
        )
    }

    /// Column-wise max over consecutive groups of `group` rows: `(n * group) x c -> n x c`.
    /// The first (lowest-row) maximum wins ties and alone receives the gradient.
    pub fn reduce_max_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if group == 0 || rows % group != 0 {
            return Err(Error::Shape(format!(
                "{rows} rows not divisible into groups of {group}"
            )));
        }
        let n = rows / group;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * cols];
        let mut argmax = vec![0usize; n * cols];
        for g in 0..n {
            let base = g * group;
            out[g * cols..(g + 1) * cols].copy_from_slice(&src[base * cols..(base + 1) * cols]);
            argmax[g * cols..(g + 1) * cols].fill(base);
            for r in base + 1..base + group {
                let row = &src[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    if row[c] > out[g * cols + c] {
                        out[g * cols + c] = row[c];
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        self.push(
            Tensor::matrix(n, cols, out)?,
            Op::GroupMax { x: x.0, argmax },
            self.needs(x.0),
        )
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = match self.value(x).shape() {
            [n] => (1, *n),
            _ => self.value(x).dims2()?,
        };
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(rows);
        for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
            let n = row
                .iter()
                .map(|&v| v * v)
                .sum::<T>()
                .sqrt()
                .max(T::from_f64(1e-12));
            for v in row.iter_mut() {
                *v = *v / n;
            }
            norms.push(n);
        }
        self.push(out, Op::L2NormRows { x: x.0, norms }, self.needs(x.0))
    }

    /// Row-wise log-softmax of a square score matrix with the diagonal excluded from each
    /// row's normalizer; diagonal outputs are fixed at zero.
    pub fn masked_log_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if n != c || n < 2 {
            return Err(Error::Shape(format!(
                "masked softmax needs a square matrix of size >= 2, got {n}x{c}"
            )));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * n];
        let mut probs = vec![T::zero(); n * n];
        for i in 0..n {
            let row = &src[i * n..(i + 1) * n];
            let mx = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(T::neg_infinity(), |m, (_, &v)| m.max(v));
            let z: T = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| (v - mx).exp())
                .sum();
            let lse = mx + z.ln();
            for j in (0..n).filter(|&j| j != i) {
                out[i * n + j] = row[j] - lse;
                probs[i * n + j] = out[i * n + j].exp();
            }
        }
        self.push(
            Tensor::matrix(n, n, out)?,
            Op::MaskedLogSoftmax { x: x.0, probs },
            self.needs(x.0),
        )
    }

    /// Vector of the selected `(row, col)` entries.
    pub fn pick(&mut self, x: Var, index: &[(usize, usize)]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len());
        for &(r, c) in index {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "pick ({r},{c}) outside {rows}x{cols}"
                )));
            }
            out.push(src[r * cols + c]);
        }
        self.push(
            Tensor::vector(out),
            Op::Pick {
                x: x.0,
                index: index.to_vec(),
            },
            self.needs(x.0),
        )
    }

    fn check_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::Shape(format!(
                "batch norm affine for {cols} features"
            )));
        }
        Ok((rows, cols))
    }

    /// Per-feature normalization with batch statistics over rows, then `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (rows, cols) = self.check_affine(x, gamma, beta)?;
        if rows < 2 {
            return Err(Error::Shape("batch norm needs at least two rows".into()));
        }
        let src = self.value(x).data();
        let inv_rows = T::from_f64(1.0 / rows as f64);
        let mut mean = vec![T::zero(); cols];
        for row in src.chunks_exact(cols) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_rows);
        let mut var = vec![T::zero(); cols];
        for row in src.chunks_exact(cols) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_rows);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                xhat[i] = (src[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        let unbias = T::from_f64(rows as f64 / (rows - 1) as f64);
        let stats = BatchStats {
            mean,
            var: var.iter().map(|&v| v * unbias).collect(),
        };
        let needs = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        let v = self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            needs,
        )?;
        Ok((v, stats))
    }

    /// Batch norm with frozen statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (rows, cols) = self.check_affine(x, gamma, beta)?;
        if mean.len() != cols || var.len() != cols {
            return Err(Error::Shape(format!(
                "running statistics for {cols} features"
            )));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                xhat[i] = (src[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        let needs = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every leaf that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let shape_of = |j: usize| self.nodes[j].value.shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.nodes[*a].value.dims2()?;
                let n = node.value.dims2()?.1;
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if self.needs(*a) {
                    // dA = G * op(B)^T
                    accumulate(&mut grads[*a], &shape_of(*a), |d| {
                        gemm(m, n, k, gd, false, bv, !trans_b, d, true)
                    });
                }
                if self.needs(*b) {
                    if *trans_b {
                        // B is n x k: dB = G^T * A
                        accumulate(&mut grads[*b], &shape_of(*b), |d| {
                            gemm(n, m, k, gd, true, av, false, d, true)
                        });
                    } else {
                        accumulate(&mut grads[*b], &shape_of(*b), |d| {
                            gemm(k, m, n, av, true, gd, false, d, true)
                        });
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.nodes[*x].value.dims2()?;
                let n = node.value.dims2()?.1;
                let (xv, wv) = (self.nodes[*x].value.data(), self.nodes[*w].value.data());
                if self.needs(*x) {
                    accumulate(&mut grads[*x], &shape_of(*x), |d| {
                        gemm(m, n, k, gd, false, wv, true, d, true)
                    });
                }
                if self.needs(*w) {
                    accumulate(&mut grads[*w], &shape_of(*w), |d| {
                        gemm(k, m, n, xv, true, gd, false, d, true)
                    });
                }
                if let Some(b) = b.filter(|&b| self.needs(b)) {
                    accumulate(&mut grads[b], &shape_of(b), |d| {
                        for row in gd.chunks_exact(n) {
                            for (o, &v) in d.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::AddBias { x, b } => {
                if self.needs(*x) {
                    accumulate(&mut grads[*x], &shape_of(*x), |d| {
                        d.iter_mut().zip(gd).for_each(|(o, &v)| *o += v)
                    });
                }
                if self.needs(*b) {
                    let n = self.nodes[*b].value.len();
                    accumulate(&mut grads[*b], &shape_of(*b), |d| {
                        for row in gd.chunks_exact(n) {
                            d.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for p in [*a, *b] {
                    if self.needs(p) {
                        accumulate(&mut grads[p], &shape_of(p), |d| {
                            d.iter_mut().zip(gd).for_each(|(o, &v)| *o += v)
                        });
                    }
                }
            }
            Op::Mul { a, b } => {
                for (p, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(p) {
                        let ov = self.nodes[other].value.data();
                        accumulate(&mut grads[p], &shape_of(p), |d| {
                            for ((o, &gv), &v) in d.iter_mut().zip(gd).zip(ov) {
                                *o += gv * v;
                            }
                        });
                    }
                }
            }
            Op::Scale { x, c } => accumulate(&mut grads[*x], &shape_of(*x), |d| {
                d.iter_mut().zip(gd).for_each(|(o, &v)| *o += v * *c)
            }),
            Op::Relu { x } => {
                let y = node.value.data();
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for ((o, &gv), &yv) in d.iter_mut().zip(gd).zip(y) {
                        if yv > T::zero() {
                            *o += gv;
                        }
                    }
                })
            }
            Op::Log { x } => {
                let xv = self.nodes[*x].value.data();
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for ((o, &gv), &v) in d.iter_mut().zip(gd).zip(xv) {
                        *o += gv / v;
                    }
                })
            }
            Op::Exp { x } => {
                let y = node.value.data();
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for ((o, &gv), &yv) in d.iter_mut().zip(gd).zip(y) {
                        *o += gv * yv;
                    }
                })
            }
            Op::Sum { x } => {
                let g0 = gd[0];
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    d.iter_mut().for_each(|o| *o += g0)
                })
            }
            Op::Mean { x } => {
                let g0 = gd[0] / T::from_f64(self.nodes[*x].value.len() as f64);
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    d.iter_mut().for_each(|o| *o += g0)
                })
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = node.value.dims2()?.0;
                let mut offset = 0;
                for &(p, c) in parts {
                    if self.needs(p) {
                        accumulate(&mut grads[p], &shape_of(p), |d| {
                            for r in 0..rows {
                                let src = &gd[r * total + offset..r * total + offset + c];
                                d[r * c..(r + 1) * c]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(o, &v)| *o += v);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::GatherRows { x, index } => {
                let cols = node.value.dims2()?.1;
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for (r, &src) in index.iter().enumerate() {
                        d[src * cols..(src + 1) * cols]
                            .iter_mut()
                            .zip(&gd[r * cols..(r + 1) * cols])
                            .for_each(|(o, &v)| *o += v);
                    }
                })
            }
            Op::GroupMax { x, argmax } => {
                let cols = node.value.dims2()?.1;
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for (o, (&src_row, &gv)) in argmax.iter().zip(gd).enumerate() {
                        d[src_row * cols + o % cols] += gv;
                    }
                })
            }
            Op::L2NormRows { x, norms } => {
                let y = node.value.data();
                let cols = y.len() / norms.len();
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for (r, &n) in norms.iter().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        let (yr, gr) = (&y[span.clone()], &gd[span.clone()]);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in d[span].iter_mut().zip(yr).zip(gr) {
                            *o += (gv - yv * dot) / n;
                        }
                    }
                })
            }
            Op::MaskedLogSoftmax { x, probs } => {
                let n = node.value.dims2()?.0;
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for i in 0..n {
                        let gs: T = (0..n).filter(|&j| j != i).map(|j| gd[i * n + j]).sum();
                        for j in (0..n).filter(|&j| j != i) {
                            d[i * n + j] += gd[i * n + j] - probs[i * n + j] * gs;
                        }
                    }
                })
            }
            Op::Pick { x, index } => {
                let cols = self.nodes[*x].value.dims2()?.1;
                accumulate(&mut grads[*x], &shape_of(*x), |d| {
                    for (&(r, c), &gv) in index.iter().zip(gd) {
                        d[r * cols + c] += gv;
                    }
                })
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = inv_std.len();
                let rows = xhat.len() / cols;
                let gam = self.nodes[*gamma].value.data();
                let mut sum_g = vec![T::zero(); cols];
                let mut sum_gx = vec![T::zero(); cols];
                for (grow, xrow) in gd.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                    for c in 0..cols {
                        sum_g[c] += grow[c];
                        sum_gx[c] += grow[c] * xrow[c];
                    }
                }
                if self.needs(*gamma) {
                    accumulate(&mut grads[*gamma], &shape_of(*gamma), |d| {
                        d.iter_mut().zip(&sum_gx).for_each(|(o, &v)| *o += v)
                    });
                }
                if self.needs(*beta) {
                    accumulate(&mut grads[*beta], &shape_of(*beta), |d| {
                        d.iter_mut().zip(&sum_g).for_each(|(o, &v)| *o += v)
                    });
                }
                if self.needs(*x) {
                    let inv_rows = T::from_f64(1.0 / rows as f64);
                    accumulate(&mut grads[*x], &shape_of(*x), |d| {
                        for r in 0..rows {
                            for c in 0..cols {
                                let i = r * cols + c;
                                // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
                                d[i] += gam[c]
                                    * inv_std[c]
                                    * (gd[i]
                                        - sum_g[c] * inv_rows
                                        - xhat[i] * sum_gx[c] * inv_rows);
                            }
                        }
                    });
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = inv_std.len();
                let gam = self.nodes[*gamma].value.data();
                if self.needs(*gamma) {
                    accumulate(&mut grads[*gamma], &shape_of(*gamma), |d| {
                        for (grow, xrow) in gd.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            for c in 0..cols {
                                d[c] += grow[c] * xrow[c];
                            }
                        }
                    });
                }
                if self.needs(*beta) {
                    accumulate(&mut grads[*beta], &shape_of(*beta), |d| {
                        for grow in gd.chunks_exact(cols) {
                            d.iter_mut().zip(grow).for_each(|(o, &v)| *o += v);
                        }
                    });
                }
                if self.needs(*x) {
                    accumulate(&mut grads[*x], &shape_of(*x), |d| {
                        for (drow, grow) in d.chunks_exact_mut(cols).zip(gd.chunks_exact(cols)) {
                            for c in 0..cols {
                                drow[c] += grow[c] * gam[c] * inv_std[c];
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
