//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! bookkeeping to run its backward rule. Nodes are only ever appended, so
//! creation order is a valid topological order and [`Tape::backward`] simply
//! walks the tape from the loss towards the leaves.
//!
//! Parameters enter through [`Tape::param`], which copies the current value
//! out of a [`ParamStore`]; their gradients come back through
//! [`Gradients::accumulate_into`].

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::param::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Epsilon added to the variance inside [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    SqrtEps(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskedSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Upsample {
        x: Var,
        batch: usize,
        len: usize,
        factor: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    WhereRows {
        x: Var,
        fill: Var,
        mask: Rc<[bool]>,
    },
    SegmentMean {
        x: Var,
        segments: Vec<(usize, usize)>,
    },
    PairwiseSqDist(Var, Var),
    Sum(Var),
    Mean(Var),
    StraightThrough(Var),
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<(usize, usize)>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
    track_params: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(TensorError::invalid(
            op,
            format!("expected a 2-D tensor, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn zip_map(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

impl Tape {
    /// Tape whose parameters receive gradients.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            track_params: true,
        }
    }

    /// Tape for forward-only evaluation; parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Brings a stored parameter onto the tape; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, self.track_params);
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Var> {
        let value = f(&self.value(x))?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, op, needs))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (value, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = expect_2d("matmul", x)?;
            let (r, c) = expect_2d("matmul", y)?;
            let (k2, n) = if trans_b { (c, r) } else { (r, c) };
            if k != k2 {
                return Err(TensorError::shape("matmul", x.shape(), y.shape()));
            }
            let mut out = vec![0.0; m * n];
            kernels::gemm(m, k, n, x.data(), false, y.data(), trans_b, &mut out, false);
            (Tensor::new(vec![m, n], out)?, m, k, n)
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            },
            needs,
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| zip_map("add", x, y, |p, q| p + q))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| zip_map("sub", x, y, |p, q| p - q))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| zip_map("mul", x, y, |p, q| p * q))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(x, Op::Affine(x, scale), |t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|v| scale * v + shift).collect(),
            )
        })
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        self.affine(x, factor, 0.0)
    }

    /// Adds a `[n]` vector to every row of `x: [.., n]`.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        self.binary(x, bias, Op::AddRow(x, bias), |t, b| {
            if b.numel() != t.cols() {
                return Err(TensorError::shape("add_row", t.shape(), b.shape()));
            }
            let mut out = t.clone();
            let c = t.cols();
            for row in out.data_mut().chunks_mut(c) {
                row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
            }
            Ok(out)
        })
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect())
        })
    }

    /// `sqrt(x + eps)`, elementwise.
    pub fn sqrt_eps(&self, x: Var, eps: f64) -> Result<Var> {
        self.unary(x, Op::SqrtEps(x), |t| {
            if t.data().iter().any(|v| v + eps < 0.0) {
                return Err(TensorError::invalid("sqrt_eps", "negative argument"));
            }
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|v| (v + eps).sqrt()).collect(),
            )
        })
    }

    /// Layer normalisation over the last dimension followed by `gain`/`bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (value, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let (t, g, b) = (&nodes[x.0].value, &nodes[gain.0].value, &nodes[bias.0].value);
            let n = t.cols();
            if g.numel() != n || b.numel() != n {
                return Err(TensorError::shape("layer_norm", t.shape(), g.shape()));
            }
            let rows = t.rows();
            let mut xhat = vec![0.0; t.numel()];
            let mut rstd = vec![0.0; rows];
            let mut out = vec![0.0; t.numel()];
            for r in 0..rows {
                let row = t.row(r);
                // shifted mean: exact for constant rows
                let x0 = row[0];
                let mean = x0 + row.iter().map(|v| v - x0).sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * g.data()[j] + b.data()[j];
                }
            }
            (Tensor::new(t.shape().to_vec(), out)?, xhat, rstd)
        };
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Row-wise softmax of `scores + mask` where `mask` holds `0` (allowed)
    /// or `−∞` (disallowed). Disallowed entries come out exactly zero.
    pub fn masked_softmax(&self, scores: Var, mask: &Tensor) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let s = &nodes[scores.0].value;
            if s.shape() != mask.shape() {
                return Err(TensorError::shape("masked_softmax", s.shape(), mask.shape()));
            }
            let mut allowed = Vec::with_capacity(mask.numel());
            for &m in mask.data() {
                if m == 0.0 {
                    allowed.push(true);
                } else if m == f64::NEG_INFINITY {
                    allowed.push(false);
                } else {
                    return Err(TensorError::invalid(
                        "masked_softmax",
                        format!("mask entries must be 0 or -inf, found {m}"),
                    ));
                }
            }
            let c = s.cols();
            let mut out = vec![0.0; s.numel()];
            for r in 0..s.rows() {
                let span = r * c..(r + 1) * c;
                if !kernels::masked_softmax_row(s.row(r), &allowed[span.clone()], &mut out[span]) {
                    return Err(TensorError::EmptyRow { row: r });
                }
            }
            Tensor::new(s.shape().to_vec(), out)?
        };
        let needs = self.needs(&[scores]);
        Ok(self.push(value, Op::MaskedSoftmax(scores), needs))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits: [P, V]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let l = &nodes[logits.0].value;
            let (p, v) = expect_2d("cross_entropy", l)?;
            if p != targets.len() || p == 0 {
                return Err(TensorError::invalid(
                    "cross_entropy",
                    format!("{p} rows but {} targets", targets.len()),
                ));
            }
            let mut probs = vec![0.0; p * v];
            let mut loss = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                if t >= v {
                    return Err(TensorError::TargetOutOfRange { index: t, vocab: v });
                }
                let row = l.row(r);
                let lse = kernels::log_sum_exp(row);
                loss += lse - row[t];
                for j in 0..v {
                    probs[r * v + j] = (row[j] - lse).exp();
                }
            }
            (Tensor::scalar(loss / p as f64), probs)
        };
        let needs = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// 1-D convolution with zero padding.
    ///
    /// `x` is `[batch, len, c_in]` or `[len, c_in]`, `weight` is
    /// `[kernel, c_in, c_out]`, `bias` is `[c_out]`. The output length is
    /// `(len + 2·pad − kernel) / stride + 1`.
    pub fn conv1d(&self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let (t, w, b) = (&nodes[x.0].value, &nodes[weight.0].value, &nodes[bias.0].value);
            let (batch, len, c_in) = match *t.shape() {
                [l, c] => (1, l, c),
                [bb, l, c] => (bb, l, c),
                _ => return Err(TensorError::invalid("conv1d", "input must be 2-D or 3-D")),
            };
            if w.ndim() != 3 || w.shape()[1] != c_in {
                return Err(TensorError::shape("conv1d", t.shape(), w.shape()));
            }
            let (kernel, c_out) = (w.shape()[0], w.shape()[2]);
            if b.numel() != c_out {
                return Err(TensorError::shape("conv1d", w.shape(), b.shape()));
            }
            if stride == 0 {
                return Err(TensorError::invalid("conv1d", "stride must be at least 1"));
            }
            if kernel == 0 || kernel > len + 2 * pad {
                return Err(TensorError::invalid(
                    "conv1d",
                    format!("kernel {kernel} longer than padded input {}", len + 2 * pad),
                ));
            }
            let geom = ConvGeom {
                batch,
                len,
                c_in,
                c_out,
                kernel,
                stride,
                pad,
            };
            let lo = geom.out_len();
            let cols = kernels::im2col(t.data(), &geom);
            let mut out = vec![0.0; batch * lo * c_out];
            kernels::gemm(batch * lo, kernel * c_in, c_out, &cols, false, w.data(), false, &mut out, false);
            for row in out.chunks_mut(c_out) {
                row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
            }
            let shape = if t.ndim() == 2 {
                vec![lo, c_out]
            } else {
                vec![batch, lo, c_out]
            };
            (Tensor::new(shape, out)?, geom)
        };
        let needs = self.needs(&[x, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w: weight,
                b: bias,
                geom,
            },
            needs,
        ))
    }

    /// Nearest-neighbour upsampling along time: each frame repeated `factor` times.
    pub fn upsample(&self, x: Var, factor: usize) -> Result<Var> {
        let (value, batch, len) = {
            let t = self.value(x);
            let (batch, len, c) = match *t.shape() {
                [l, c] => (1, l, c),
                [bb, l, c] => (bb, l, c),
                _ => return Err(TensorError::invalid("upsample", "input must be 2-D or 3-D")),
            };
            if factor == 0 {
                return Err(TensorError::invalid("upsample", "factor must be at least 1"));
            }
            let mut out = Vec::with_capacity(t.numel() * factor);
            for frame in t.data().chunks(c) {
                for _ in 0..factor {
                    out.extend_from_slice(frame);
                }
            }
            let shape = if t.ndim() == 2 {
                vec![len * factor, c]
            } else {
                vec![batch, len * factor, c]
            };
            (Tensor::new(shape, out)?, batch, len)
        };
        let needs = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Upsample {
                x,
                batch,
                len,
                factor,
            },
            needs,
        ))
    }

    /// Rows of `table: [N, d]` selected by `ids`.
    pub fn gather(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let value = {
            let t = self.value(table);
            let (n, d) = expect_2d("gather", &t)?;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                if i >= n {
                    return Err(TensorError::invalid(
                        "gather",
                        format!("index {i} out of range for {n} rows"),
                    ));
                }
                out.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![ids.len(), d], out)?
        };
        let needs = self.needs(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.unary(x, Op::SliceRows { x, start }, |t| {
            let (r, c) = expect_2d("slice_rows", t)?;
            if start + len > r {
                return Err(TensorError::invalid("slice_rows", "range out of bounds"));
            }
            Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())
        })
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.unary(x, Op::SliceCols { x, start }, |t| {
            let (r, c) = expect_2d("slice_cols", t)?;
            if start + len > c {
                return Err(TensorError::invalid("slice_cols", "range out of bounds"));
            }
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&t.row(i)[start..start + len]);
            }
            Tensor::new(vec![r, len], out)
        })
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| TensorError::invalid("concat_rows", "no inputs"))?;
            let c = expect_2d("concat_rows", &nodes[first.0].value)?.1;
            let mut out = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = &nodes[p.0].value;
                let (r, cc) = expect_2d("concat_rows", t)?;
                if cc != c {
                    return Err(TensorError::shape("concat_rows", &[rows, c], t.shape()));
                }
                rows += r;
                out.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, c], out)?
        };
        let needs = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| TensorError::invalid("concat_cols", "no inputs"))?;
            let r = expect_2d("concat_cols", &nodes[first.0].value)?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let t = &nodes[p.0].value;
                let (rr, c) = expect_2d("concat_cols", t)?;
                if rr != r {
                    return Err(TensorError::shape("concat_cols", &[r], t.shape()));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    out.extend_from_slice(nodes[p.0].value.row(i));
                }
            }
            Tensor::new(vec![r, total], out)?
        };
        let needs = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Rows of `x: [R, C]` where `mask` is set are replaced by `fill: [C]`.
    pub fn where_rows(&self, x: Var, fill: Var, mask: &[bool]) -> Result<Var> {
        self.binary(
            x,
            fill,
            Op::WhereRows {
                x,
                fill,
                mask: mask.into(),
            },
            |t, f| {
                let (r, c) = expect_2d("where_rows", t)?;
                if f.numel() != c || mask.len() != r {
                    return Err(TensorError::shape("where_rows", t.shape(), f.shape()));
                }
                let mut out = t.clone();
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        out.row_mut(i).copy_from_slice(f.data());
                    }
                }
                Ok(out)
            },
        )
    }

    /// Mean over each `(start, len)` row segment of `x: [R, C]`, giving `[S, C]`.
    pub fn segment_mean(&self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let value = {
            let t = self.value(x);
            let (r, c) = expect_2d("segment_mean", &t)?;
            let mut out = vec![0.0; segments.len() * c];
            for (s, &(start, len)) in segments.iter().enumerate() {
                if len == 0 || start + len > r {
                    return Err(TensorError::invalid("segment_mean", "bad segment"));
                }
                let dst = &mut out[s * c..(s + 1) * c];
                for i in start..start + len {
                    dst.iter_mut().zip(t.row(i)).for_each(|(d, v)| *d += v);
                }
                dst.iter_mut().for_each(|d| *d /= len as f64);
            }
            Tensor::new(vec![segments.len(), c], out)?
        };
        let needs = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
            needs,
        ))
    }

    /// Squared Euclidean distances between the rows of `a: [N, d]` and `b: [M, d]`.
    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::PairwiseSqDist(a, b), |x, y| {
            let (n, d) = expect_2d("pairwise_sq_dist", x)?;
            let (m, d2) = expect_2d("pairwise_sq_dist", y)?;
            if d != d2 {
                return Err(TensorError::shape("pairwise_sq_dist", x.shape(), y.shape()));
            }
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] = x
                        .row(i)
                        .iter()
                        .zip(y.row(j))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                }
            }
            Tensor::new(vec![n, m], out)
        })
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sum(x), |t| Ok(Tensor::scalar(t.data().iter().sum())))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Mean(x), |t| {
            if t.numel() == 0 {
                return Err(TensorError::invalid("mean", "empty tensor"));
            }
            Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64))
        })
    }

    /// Forward value `quantized`, backward identity into `z`.
    pub fn straight_through(&self, z: Var, quantized: Tensor) -> Result<Var> {
        if self.value(z).shape() != quantized.shape() {
            return Err(TensorError::shape(
                "straight_through",
                &self.shape(z),
                quantized.shape(),
            ));
        }
        let needs = self.needs(&[z]);
        Ok(self.push(quantized, Op::StraightThrough(z), needs))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        self.unary(x, Op::Reshape(x), |t| t.clone().reshape(shape.to_vec()))
    }

    /// Multi-head scaled dot-product attention applied independently to each
    /// `(start, len)` row segment of `q`, `k`, `v: [R, d]`.
    ///
    /// `masks[s]` is the additive `[len, len]` mask (entries `0` or `−∞`) of
    /// segment `s`. Rows outside every segment produce zeros.
    pub fn attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[(usize, usize)],
        masks: &[Tensor],
    ) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let (qt, kt, vt) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let (r, d) = expect_2d("attention", qt)?;
            if kt.shape() != qt.shape() || vt.shape() != qt.shape() {
                return Err(TensorError::shape("attention", qt.shape(), kt.shape()));
            }
            if heads == 0 || d % heads != 0 {
                return Err(TensorError::invalid("attention", format!("{heads} heads do not divide width {d}")));
            }
            if masks.len() != segments.len() {
                return Err(TensorError::invalid("attention", "one mask per segment required"));
            }
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut out = vec![0.0; r * d];
            let mut probs = Vec::new();
            for (&(start, len), mask) in segments.iter().zip(masks) {
                if start + len > r || mask.shape() != [len, len] {
                    return Err(TensorError::invalid("attention", "segment or mask out of range"));
                }
                let mut allowed = Vec::with_capacity(len * len);
                for &m in mask.data() {
                    if m == 0.0 {
                        allowed.push(true);
                    } else if m == f64::NEG_INFINITY {
                        allowed.push(false);
                    } else {
                        return Err(TensorError::invalid(
                            "attention",
                            format!("mask entries must be 0 or -inf, found {m}"),
                        ));
                    }
                }
                let mut scores = vec![0.0; len];
                let mut p = vec![0.0; len];
                for h in 0..heads {
                    let c0 = h * dh;
                    for i in 0..len {
                        let qi = &qt.row(start + i)[c0..c0 + dh];
                        for (j, sc) in scores.iter_mut().enumerate() {
                            let kj = &kt.row(start + j)[c0..c0 + dh];
                            *sc = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if !kernels::masked_softmax_row(&scores, &allowed[i * len..(i + 1) * len], &mut p) {
                            return Err(TensorError::EmptyRow { row: start + i });
                        }
                        let o = &mut out[(start + i) * d + c0..(start + i) * d + c0 + dh];
                        for (j, &pj) in p.iter().enumerate() {
                            if pj != 0.0 {
                                let vj = &vt.row(start + j)[c0..c0 + dh];
                                o.iter_mut().zip(vj).for_each(|(a, b)| *a += pj * b);
                            }
                        }
                        probs.extend_from_slice(&p);
                    }
                }
            }
            (Tensor::new(vec![r, d], out)?, probs)
        };
        let needs = self.needs(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// `x · w + b` for `x: [R, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Mean squared difference.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Runs the backward pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must have one element, shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(&nodes, i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self.params.borrow().iter().map(|(&p, &v)| (p, v)).collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into `grads`.
    pub fn accumulate_into(&self, grads: &mut Grads) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                grads.add(id, g);
            }
        }
    }
}

fn buf<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            m,
            k,
            n,
            trans_b,
        } => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            if let Some(da) = buf(grads, nodes, a) {
                if trans_b {
                    kernels::gemm(m, n, k, g, false, bv, false, da, true);
                } else {
                    kernels::gemm(m, n, k, g, false, bv, true, da, true);
                }
            }
            if let Some(db) = buf(grads, nodes, b) {
                if trans_b {
                    kernels::gemm(n, m, k, g, true, av, false, db, true);
                } else {
                    kernels::gemm(k, m, n, av, true, g, false, db, true);
                }
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = buf(grads, nodes, v) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(d) = buf(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(d) = buf(grads, nodes, b) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(d) = buf(grads, nodes, a) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(bv) {
                    *x += y * w;
                }
            }
            if let Some(d) = buf(grads, nodes, b) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(av) {
                    *x += y * w;
                }
            }
        }
        &Op::Affine(x, s) => {
            if let Some(d) = buf(grads, nodes, x) {
                d.iter_mut().zip(g).for_each(|(a, y)| *a += s * y);
            }
        }
        &Op::AddRow(x, bias) => {
            if let Some(d) = buf(grads, nodes, x) {
                d.iter_mut().zip(g).for_each(|(a, y)| *a += y);
            }
            let c = nodes[bias.0].value.numel();
            if let Some(d) = buf(grads, nodes, bias) {
                for row in g.chunks(c) {
                    d.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                }
            }
        }
        &Op::Relu(x) => {
            let xv = nodes[x.0].value.data();
            if let Some(d) = buf(grads, nodes, x) {
                for ((a, y), v) in d.iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *a += y;
                    }
                }
            }
        }
        &Op::SqrtEps(x) => {
            let out = node.value.data();
            if let Some(d) = buf(grads, nodes, x) {
                for ((a, y), o) in d.iter_mut().zip(g).zip(out) {
                    *a += y * 0.5 / o;
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let n = nodes[gain.0].value.numel();
            let gv = nodes[gain.0].value.data();
            if let Some(d) = buf(grads, nodes, *gain) {
                for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        d[j] += grow[j] * hrow[j];
                    }
                }
            }
            if let Some(d) = buf(grads, nodes, *bias) {
                for grow in g.chunks(n) {
                    d.iter_mut().zip(grow).for_each(|(a, y)| *a += y);
                }
            }
            if let Some(d) = buf(grads, nodes, *x) {
                let nf = n as f64;
                for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        let dh = grow[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                    }
                    let drow = &mut d[r * n..(r + 1) * n];
                    for j in 0..n {
                        let dh = grow[j] * gv[j];
                        drow[j] += rstd[r] / nf * (nf * dh - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
            }
        }
        &Op::MaskedSoftmax(x) => {
            let y = &node.value;
            let c = y.cols();
            if let Some(d) = buf(grads, nodes, x) {
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let p = targets.len();
            let v = probs.len() / p;
            let scale = g[0] / p as f64;
            if let Some(d) = buf(grads, nodes, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..v {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d[r * v + j] += scale * (probs[r * v + j] - onehot);
                    }
                }
            }
        }
        &Op::Conv1d { x, w, b, geom } => {
            let lo = geom.out_len();
            let rows = geom.batch * lo;
            let width = geom.kernel * geom.c_in;
            let xv = nodes[x.0].value.data();
            let wv = nodes[w.0].value.data();
            if nodes[w.0].needs_grad {
                let cols = kernels::im2col(xv, &geom);
                if let Some(dw) = buf(grads, nodes, w) {
                    kernels::gemm(width, rows, geom.c_out, &cols, true, g, false, dw, true);
                }
            }
            if let Some(db) = buf(grads, nodes, b) {
                for row in g.chunks(geom.c_out) {
                    db.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                }
            }
            if let Some(dx) = buf(grads, nodes, x) {
                let mut dcols = vec![0.0; rows * width];
                kernels::gemm(rows, geom.c_out, width, g, false, wv, true, &mut dcols, false);
                kernels::col2im(&dcols, &geom, dx);
            }
        }
        &Op::Upsample {
            x,
            batch,
            len,
            factor,
        } => {
            if let Some(d) = buf(grads, nodes, x) {
                let c = d.len() / (batch * len);
                for (f, frame) in d.chunks_mut(c).enumerate() {
                    for r in 0..factor {
                        let src = &g[(f * factor + r) * c..(f * factor + r + 1) * c];
                        frame.iter_mut().zip(src).for_each(|(a, y)| *a += y);
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            let c = nodes[table.0].value.cols();
            if let Some(d) = buf(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g[r * c..(r + 1) * c];
                    d[id * c..(id + 1) * c]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, y)| *a += y);
                }
            }
        }
        &Op::SliceRows { x, start } => {
            let c = nodes[x.0].value.cols();
            if let Some(d) = buf(grads, nodes, x) {
                d[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, y)| *a += y);
            }
        }
        &Op::SliceCols { x, start } => {
            let c = nodes[x.0].value.cols();
            let len = node.value.cols();
            if let Some(d) = buf(grads, nodes, x) {
                for (r, grow) in g.chunks(len).enumerate() {
                    d[r * c + start..r * c + start + len]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(a, y)| *a += y);
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p.0].value.numel();
                if let Some(d) = buf(grads, nodes, p) {
                    d.iter_mut().zip(&g[off..off + n]).for_each(|(a, y)| *a += y);
                }
                off += n;
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut off = 0;
            for &p in parts {
                let c = nodes[p.0].value.cols();
                if let Some(d) = buf(grads, nodes, p) {
                    for (r, drow) in d.chunks_mut(c).enumerate() {
                        let src = &g[r * total + off..r * total + off + c];
                        drow.iter_mut().zip(src).for_each(|(a, y)| *a += y);
                    }
                }
                off += c;
            }
        }
        Op::WhereRows { x, fill, mask } => {
            let c = nodes[fill.0].value.numel();
            if let Some(d) = buf(grads, nodes, *x) {
                for (r, &m) in mask.iter().enumerate() {
                    if !m {
                        d[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(a, y)| *a += y);
                    }
                }
            }
            if let Some(d) = buf(grads, nodes, *fill) {
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        d.iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(a, y)| *a += y);
                    }
                }
            }
        }
        Op::SegmentMean { x, segments } => {
            let c = nodes[x.0].value.cols();
            if let Some(d) = buf(grads, nodes, *x) {
                for (s, &(start, len)) in segments.iter().enumerate() {
                    let src = &g[s * c..(s + 1) * c];
                    for i in start..start + len {
                        d[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, y)| *a += y / len as f64);
                    }
                }
            }
        }
        &Op::PairwiseSqDist(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (n, dim) = (av.rows(), av.cols());
            let m = bv.rows();
            if let Some(da) = buf(grads, nodes, a) {
                for i in 0..n {
                    for j in 0..m {
                        let w = 2.0 * g[i * m + j];
                        for k in 0..dim {
                            da[i * dim + k] += w * (av.at(i, k) - bv.at(j, k));
                        }
                    }
                }
            }
            if let Some(db) = buf(grads, nodes, b) {
                for i in 0..n {
                    for j in 0..m {
                        let w = 2.0 * g[i * m + j];
                        for k in 0..dim {
                            db[j * dim + k] -= w * (av.at(i, k) - bv.at(j, k));
                        }
                    }
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(d) = buf(grads, nodes, x) {
                d.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        &Op::Mean(x) => {
            if let Some(d) = buf(grads, nodes, x) {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|a| *a += s);
            }
        }
        &Op::StraightThrough(z) | &Op::Reshape(z) => {
            if let Some(d) = buf(grads, nodes, z) {
                d.iter_mut().zip(g).for_each(|(a, y)| *a += y);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            segments,
            probs,
        } => {
            let (qt, kt, vt) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let (r, d) = (qt.rows(), qt.cols());
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut dq = vec![0.0; r * d];
            let mut dk = vec![0.0; r * d];
            let mut dv = vec![0.0; r * d];
            let mut offset = 0;
            let mut dp = Vec::new();
            for &(start, len) in segments {
                dp.resize(len, 0.0);
                for h in 0..*heads {
                    let c0 = h * dh;
                    for i in 0..len {
                        let p = &probs[offset..offset + len];
                        offset += len;
                        let gi = &g[(start + i) * d + c0..(start + i) * d + c0 + dh];
                        for (j, &pj) in p.iter().enumerate() {
                            let vj = &vt.row(start + j)[c0..c0 + dh];
                            dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            if pj != 0.0 {
                                let dvj = &mut dv[(start + j) * d + c0..(start + j) * d + c0 + dh];
                                dvj.iter_mut().zip(gi).for_each(|(a, b)| *a += pj * b);
                            }
                        }
                        let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        let qi = &qt.row(start + i)[c0..c0 + dh];
                        for (j, &pj) in p.iter().enumerate() {
                            if pj == 0.0 {
                                continue;
                            }
                            let ds = pj * (dp[j] - dot) * scale;
                            let kj = &kt.row(start + j)[c0..c0 + dh];
                            let dqi = &mut dq[(start + i) * d + c0..(start + i) * d + c0 + dh];
                            dqi.iter_mut().zip(kj).for_each(|(a, b)| *a += ds * b);
                            let dkj = &mut dk[(start + j) * d + c0..(start + j) * d + c0 + dh];
                            dkj.iter_mut().zip(qi).for_each(|(a, b)| *a += ds * b);
                        }
                    }
                }
            }
            for (var, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                if let Some(d) = buf(grads, nodes, var) {
                    d.iter_mut().zip(&local).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = tape.constant(Tensor::eye(2));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(*tape.value(c), *tape.value(a));
        let c2 = tape.matmul(i, a).unwrap();
        assert_eq!(*tape.value(c2), *tape.value(a));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        assert!(tape.matmul_t(a, b).is_ok());
    }

    #[test]
    fn softmax_one_allowed_is_one_hot() {
        let tape = Tape::new();
        let s = tape.constant(t2(&[vec![0.3, -2.0, 5.0], vec![1.0, 1.0, 1.0]]));
        let ninf = f64::NEG_INFINITY;
        let mask = t2(&[vec![ninf, 0.0, ninf], vec![0.0, ninf, ninf]]);
        let p = tape.masked_softmax(s, &mask).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_uniform_over_allowed() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::full(vec![1, 4], 2.5));
        let ninf = f64::NEG_INFINITY;
        let mask = t2(&[vec![0.0, ninf, 0.0, 0.0]]);
        let p = tape.masked_softmax(s, &mask).unwrap();
        let v = tape.value(p);
        for (j, &x) in v.data().iter().enumerate() {
            let want = if j == 1 { 0.0 } else { 1.0 / 3.0 };
            assert!((x - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_empty_row_errors() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::zeros(vec![2, 2]));
        let ninf = f64::NEG_INFINITY;
        let mask = t2(&[vec![0.0, 0.0], vec![ninf, ninf]]);
        assert!(matches!(
            tape.masked_softmax(s, &mask),
            Err(TensorError::EmptyRow { row: 1 })
        ));
        let bad = t2(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(tape.masked_softmax(s, &bad).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 5], 0.1));
        let g = tape.constant(Tensor::full(vec![5], 1.0));
        let b = tape.constant(Tensor::zeros(vec![5]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_cases() {
        let tape = Tape::new();
        let confident = tape.constant(t2(&[vec![0.0, 1e4, 0.0]]));
        let l = tape.cross_entropy(confident, &[1]).unwrap();
        assert!(tape.item(l).abs() < 1e-12);

        let uniform = tape.constant(Tensor::zeros(vec![3, 512]));
        let l = tape.cross_entropy(uniform, &[0, 100, 511]).unwrap();
        assert!((tape.item(l) - 512f64.ln()).abs() < 1e-12);
        assert!((tape.item(l) - 6.2383).abs() < 1e-4);

        assert!(matches!(
            tape.cross_entropy(uniform, &[0, 1, 512]),
            Err(TensorError::TargetOutOfRange { index: 512, vocab: 512 })
        ));
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        // kernel 3, centre tap is the identity
        let mut w = Tensor::zeros(vec![3, 2, 2]);
        w.data_mut()[4] = 1.0;
        w.data_mut()[7] = 1.0;
        let w = tape.constant(w);
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(*tape.value(y), *tape.value(x));
    }

    #[test]
    fn conv_stride_four() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![64, 3]));
        let w = tape.constant(Tensor::zeros(vec![4, 3, 2]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.conv1d(x, w, b, 4, 0).unwrap();
        assert_eq!(tape.shape(y), vec![16, 2]);

        let long = tape.constant(Tensor::zeros(vec![7, 3, 2]));
        assert!(tape.conv1d(x, long, b, 1, 0).is_ok());
        let short = tape.constant(Tensor::zeros(vec![2, 3]));
        let w9 = tape.constant(Tensor::zeros(vec![9, 3, 2]));
        assert!(tape.conv1d(short, w9, b, 1, 2).is_err());
    }

    #[test]
    fn straight_through_passes_identity() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.2, -0.4]));
        let q = tape.straight_through(z, Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(tape.value(q).data(), &[1.0, 2.0]);
        let s = tape.sum(q).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(z).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn inference_tape_params_are_constant() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0])).unwrap();
        let tape = Tape::inference();
        let w = tape.param(&store, id);
        assert_eq!(tape.param(&store, id), w);
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(w).is_none());
    }
}
