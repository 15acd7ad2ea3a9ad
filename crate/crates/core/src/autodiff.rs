//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every executed operation in creation order, which is
//! already a topological order. [`Graph::backward`] walks the record once in
//! reverse and accumulates gradients into the leaves created with
//! [`Graph::param`]. Intermediate gradients live only for the duration of a
//! backward pass, so calling it twice accumulates exactly twice the leaf
//! gradients.
//!
//! Broadcasting is limited to the right-hand operand of binary ops, and only
//! for a scalar or a row matching the trailing dimension.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Running statistics of a batch normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
        bc: Broadcast,
    },
    Sub {
        a: Var,
        b: Var,
        bc: Broadcast,
    },
    Mul {
        a: Var,
        b: Var,
        bc: Broadcast,
    },
    Scale {
        x: Var,
        factor: T,
    },
    AddScalar {
        x: Var,
    },
    Relu {
        x: Var,
    },
    PowScalar {
        x: Var,
        exp: T,
    },
    PowVar {
        x: Var,
        exp: Var,
    },
    Recip {
        x: Var,
    },
    ClampMin {
        x: Var,
        min: T,
    },
    Reduce {
        x: Var,
        kind: ReduceKind,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    SumAll {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Narrow {
        x: Var,
        outer: usize,
        src_len: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        inputs: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
        row_len: usize,
    },
    GroupMean {
        x: Var,
        groups: Vec<Vec<usize>>,
        row_len: usize,
    },
    PairDistances {
        x: Var,
        y: Var,
        pairs: Vec<(usize, usize)>,
        dim: usize,
    },
    Select {
        x: Var,
        idx: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    Pool2 {
        x: Var,
        dims: [usize; 4],
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<T>,
        probs: Vec<T>,
        rows: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn zeros<T: Real>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            check_finite: false,
        }
    }

    /// Turns on the after-every-op NaN/Inf check.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push("constant", t, Op::Leaf, false).expect("leaf push")
    }

    /// Trainable leaf; receives `dLoss/dLeaf` on backward.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push("param", t, Op::Leaf, true).expect("leaf push")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.node(v).value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    // ----------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(
            "matmul",
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, m, k, n },
            rg,
        )
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::Same)
        } else if self.value(b).len() == 1 {
            Ok(Broadcast::Scalar)
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            Ok(Broadcast::Row)
        } else {
            Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Var, Var, Broadcast) -> Op<T>,
    ) -> Result<Var> {
        let bc = self.broadcast_kind(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let out: Vec<T> = match bc {
            Broadcast::Same => av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.data().iter().map(|&x| f(x, bv[0])).collect(),
            Broadcast::Row => {
                let n = bv.len();
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv[i % n]))
                    .collect()
            }
        };
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        self.push(name, t, make(a, b, bc), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(&[x]);
        self.push(name, t, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let factor = T::of(factor);
        self.unary("scale", x, |v| v * factor, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn clamp_min(&mut self, x: Var, min: f64) -> Result<Var> {
        let min = T::of(min);
        self.unary("clamp_min", x, |v| v.max(min), Op::ClampMin { x, min })
    }

    fn check_pow_domain(&self, x: Var, exp: T) -> Result<()> {
        if exp.fract() != T::zero() && self.value(x).data().iter().any(|&v| v < T::zero()) {
            return Err(Error::domain(
                "pow",
                format!("negative base with non-integer exponent {exp}"),
            ));
        }
        Ok(())
    }

    pub fn pow_scalar(&mut self, x: Var, exp: f64) -> Result<Var> {
        let exp = T::of(exp);
        self.check_pow_domain(x, exp)?;
        self.unary("pow_scalar", x, |v| v.powf(exp), Op::PowScalar { x, exp })
    }

    /// `x^e` where the exponent is a scalar node that may itself be trainable.
    pub fn pow_var(&mut self, x: Var, exp: Var) -> Result<Var> {
        if self.value(exp).len() != 1 {
            return Err(Error::Shape {
                op: "pow_var",
                left: self.shape(x).to_vec(),
                right: self.shape(exp).to_vec(),
            });
        }
        let e = self.scalar_value(exp);
        self.check_pow_domain(x, e)?;
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v.powf(e)).collect())?;
        let rg = self.rg(&[x, exp]);
        self.push("pow_var", t, Op::PowVar { x, exp }, rg)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v == T::zero()) {
            return Err(Error::domain("recip", "division by zero"));
        }
        self.unary("recip", x, |v| v.recip(), Op::Recip { x })
    }

    /// Reduces one axis. Max routes its gradient to the first maximal element.
    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::domain(
                "reduce",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_dims(&shape, axis);
        let data = self.value(x).data();
        let mut out = zeros::<T>(outer * inner);
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + data[base + i];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let n = T::of(len as f64);
                    out.iter_mut().for_each(|v| *v = *v / n);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut bv = data[o * len * inner + i];
                        for l in 1..len {
                            let v = data[(o * len + l) * inner + i];
                            if v > bv {
                                bv = v;
                                best = l;
                            }
                        }
                        out[o * inner + i] = bv;
                        argmax[o * inner + i] = best;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.rg(&[x]);
        self.push(
            "reduce",
            Tensor::new(out_shape, out)?,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            },
            rg,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push("reshape", t, Op::Reshape { x }, rg)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::domain(
                "narrow",
                format!("range {start}..{} invalid on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, src_len, inner) = axis_dims(&shape, axis);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * src_len + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[x]);
        self.push(
            "narrow",
            Tensor::new(out_shape, out)?,
            Op::Narrow {
                x,
                outer,
                src_len,
                start,
                len,
                inner,
            },
            rg,
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        let base_shape = self.shape(*first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::domain("concat", format!("axis {axis} out of range")));
        }
        let mut inputs = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: base_shape.clone(),
                    right: s.to_vec(),
                });
            }
            inputs.push((p, s[axis]));
            total += s[axis];
        }
        let (outer, _, inner) = axis_dims(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, l) in &inputs {
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = base_shape;
        out_shape[axis] = total;
        let rg = self.rg(parts);
        self.push(
            "concat",
            Tensor::new(out_shape, out)?,
            Op::Concat {
                inputs,
                outer,
                inner,
            },
            rg,
        )
    }

    /// Selects leading-axis slices by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::domain(
                "gather_rows",
                format!("row indices invalid for shape {shape:?}"),
            ));
        }
        let row_len: usize = shape[1..].iter().product();
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for &r in rows {
            out.extend_from_slice(&data[r * row_len..(r + 1) * row_len]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let rg = self.rg(&[x]);
        self.push(
            "gather_rows",
            Tensor::new(out_shape, out)?,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
                row_len,
            },
            rg,
        )
    }

    /// Mean of each group of rows of a matrix; output row `g` is the mean of
    /// rows `groups[g]`.
    pub fn group_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::domain("group_mean", format!("expected a matrix, got {shape:?}")));
        }
        let row_len = shape[1];
        if groups.is_empty() {
            return Err(Error::domain("group_mean", "no groups"));
        }
        for (gi, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::domain("group_mean", format!("group {gi} is empty")));
            }
            if g.iter().any(|&r| r >= shape[0]) {
                return Err(Error::domain("group_mean", format!("group {gi} has an invalid row")));
            }
        }
        let data = self.value(x).data();
        let mut out = zeros::<T>(groups.len() * row_len);
        for (gi, g) in groups.iter().enumerate() {
            let dst = &mut out[gi * row_len..(gi + 1) * row_len];
            for &r in g {
                for (d, &s) in dst.iter_mut().zip(&data[r * row_len..(r + 1) * row_len]) {
                    *d = *d + s;
                }
            }
            let n = T::of(g.len() as f64);
            dst.iter_mut().for_each(|v| *v = *v / n);
        }
        let rg = self.rg(&[x]);
        self.push(
            "group_mean",
            Tensor::new(vec![groups.len(), row_len], out)?,
            Op::GroupMean {
                x,
                groups: groups.to_vec(),
                row_len,
            },
            rg,
        )
    }

    /// Euclidean distances `sqrt(|x_i - y_j|^2 + eps)` for the listed row pairs.
    pub fn pair_distances(&mut self, x: Var, y: Var, pairs: &[(usize, usize)], eps: f64) -> Result<Var> {
        let (sx, sy) = (self.shape(x).to_vec(), self.shape(y).to_vec());
        if sx.len() != 2 || sy.len() != 2 || sx[1] != sy[1] {
            return Err(Error::Shape {
                op: "pair_distances",
                left: sx,
                right: sy,
            });
        }
        if pairs.is_empty() {
            return Err(Error::domain("pair_distances", "no pairs"));
        }
        if pairs.iter().any(|&(i, j)| i >= sx[0] || j >= sy[0]) {
            return Err(Error::domain("pair_distances", "pair index out of range"));
        }
        let dim = sx[1];
        let (xd, yd) = (self.value(x).data(), self.value(y).data());
        let eps = T::of(eps);
        let out: Vec<T> = pairs
            .iter()
            .map(|&(i, j)| {
                let s: T = xd[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(&yd[j * dim..(j + 1) * dim])
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                (s + eps).sqrt()
            })
            .collect();
        let rg = self.rg(&[x, y]);
        self.push(
            "pair_distances",
            Tensor::new(vec![pairs.len()], out)?,
            Op::PairDistances {
                x,
                y,
                pairs: pairs.to_vec(),
                dim,
            },
            rg,
        )
    }

    /// Picks elements of the flattened tensor.
    pub fn select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::domain("select", "index out of range"));
        }
        let d = self.value(x).data();
        let out = idx.iter().map(|&i| d[i]).collect();
        let rg = self.rg(&[x]);
        self.push(
            "select",
            Tensor::new(vec![idx.len()], out)?,
            Op::Select {
                x,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Batch normalization over the rows of an `[N, C]` matrix. Train mode
    /// normalizes with the biased batch variance and folds the unbiased one
    /// into `stats`; eval mode normalizes with `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::domain("batchnorm", format!("expected [N, C], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::Shape {
                    op: "batchnorm",
                    left: shape.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::domain("batchnorm", "running stats width mismatch"));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::domain(
                "batchnorm",
                "train mode needs at least 2 rows (degenerate variance)",
            ));
        }
        let eps = T::of(BN_EPS);
        let data = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = zeros::<T>(c);
                for r in 0..n {
                    for (m, &v) in mean.iter_mut().zip(&data[r * c..(r + 1) * c]) {
                        *m = *m + v;
                    }
                }
                let nf = T::of(n as f64);
                mean.iter_mut().for_each(|m| *m = *m / nf);
                let mut var = zeros::<T>(c);
                for r in 0..n {
                    for ((s, &v), &m) in var.iter_mut().zip(&data[r * c..(r + 1) * c]).zip(&mean) {
                        *s = *s + (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / nf);
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            for j in 0..c {
                let h = (data[r * c + j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        if mode == Mode::Train {
            let mom = T::of(BN_MOMENTUM);
            let unbias = T::of(n as f64 / (n as f64 - 1.0));
            for j in 0..c {
                stats.mean[j] = (T::one() - mom) * stats.mean[j] + mom * mean[j];
                stats.var[j] = (T::one() - mom) * stats.var[j] + mom * var[j] * unbias;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            "batchnorm",
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
            rg,
        )
    }

    /// 2x2 mean pooling of a `[B, H, W, C]` map.
    pub fn pool2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
            return Err(Error::domain(
                "pool2",
                format!("expected [B, H, W, C] with even H and W, got {shape:?}"),
            ));
        }
        let [b, h, w, c] = [shape[0], shape[1], shape[2], shape[3]];
        let (ho, wo) = (h / 2, w / 2);
        let data = self.value(x).data();
        let quarter = T::of(0.25);
        let mut out = zeros::<T>(b * ho * wo * c);
        for bi in 0..b {
            for r in 0..ho {
                for col in 0..wo {
                    let dst = ((bi * ho + r) * wo + col) * c;
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((bi * h + 2 * r + dr) * w + 2 * col + dc) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch] + data[src + ch];
                        }
                    }
                    out[dst..dst + c].iter_mut().for_each(|v| *v = *v * quarter);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            "pool2",
            Tensor::new(vec![b, ho, wo, c], out)?,
            Op::Pool2 {
                x,
                dims: [b, h, w, c],
            },
            rg,
        )
    }

    /// Mean over rows of the cross-entropy between `softmax(logits)` and a
    /// label-smoothed target: `1 - (N-1)/N * xi` on the true class and
    /// `xi / N` elsewhere.
    pub fn cross_entropy_smooth(&mut self, logits: Var, labels: &[usize], xi: f64) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let (rows, n) = (shape[0], shape[1]);
        if n < 2 {
            return Err(Error::domain("cross_entropy", "need at least 2 classes"));
        }
        if !(0.0..1.0).contains(&xi) {
            return Err(Error::domain("cross_entropy", format!("smoothing {xi} outside [0, 1)")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::domain(
                "cross_entropy",
                format!("label {bad} >= number of classes {n}"),
            ));
        }
        let data = self.value(logits).data();
        let off = T::of(xi / n as f64);
        let on = T::of(1.0 - (n as f64 - 1.0) / n as f64 * xi);
        let mut probs = Vec::with_capacity(rows * n);
        let mut targets = Vec::with_capacity(rows * n);
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &data[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for (j, &v) in row.iter().enumerate() {
                let logp = v - lse;
                let q = if j == label { on } else { off };
                total = total - q * logp;
                probs.push(logp.exp());
                targets.push(q);
            }
        }
        let loss = total / T::of(rows as f64);
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                rows,
            },
            rg,
        )
    }

    // ------------------------------------------------------------ backward

    /// Populates gradients of every trainable leaf reachable from `loss`.
    /// Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::domain("backward", "empty graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(up) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.leaf_grads[i];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&up).for_each(|(a, &g)| *a = *a + g),
                    None => *slot = Some(up),
                }
                continue;
            }
            self.propagate(i, &up, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let n = nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| zeros(n));
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let s: T = urow.iter().zip(brow).map(|(&u, &w)| u * w).sum();
                            g[r * k + p] = g[r * k + p] + s;
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            let grow = &mut g[p * n..(p + 1) * n];
                            for (gv, &u) in grow.iter_mut().zip(urow) {
                                *gv = *gv + av * u;
                            }
                        }
                    }
                });
            }
            Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
                let sign = if matches!(nodes[i].op, Op::Sub { .. }) {
                    -T::one()
                } else {
                    T::one()
                };
                acc(*a, &mut |g| g.iter_mut().zip(up).for_each(|(g, &u)| *g = *g + u));
                let bc = *bc;
                acc(*b, &mut |g| reduce_broadcast(g, up, bc, |u, _| sign * u));
            }
            Op::Mul { a, b, bc } => {
                let (ad, bd) = (val(*a), val(*b));
                let bc = *bc;
                acc(*a, &mut |g| {
                    for (j, (gv, &u)) in g.iter_mut().zip(up).enumerate() {
                        let bv = match bc {
                            Broadcast::Same => bd[j],
                            Broadcast::Scalar => bd[0],
                            Broadcast::Row => bd[j % bd.len()],
                        };
                        *gv = *gv + u * bv;
                    }
                });
                acc(*b, &mut |g| reduce_broadcast(g, up, bc, |u, j| u * ad[j]));
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                acc(*x, &mut |g| g.iter_mut().zip(up).for_each(|(g, &u)| *g = *g + u * f));
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                acc(*x, &mut |g| g.iter_mut().zip(up).for_each(|(g, &u)| *g = *g + u));
            }
            Op::Relu { x } => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for ((gv, &u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        if xv > T::zero() {
                            *gv = *gv + u;
                        }
                    }
                });
            }
            Op::ClampMin { x, min } => {
                let (xd, m) = (val(*x), *min);
                acc(*x, &mut |g| {
                    for ((gv, &u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        if xv > m {
                            *gv = *gv + u;
                        }
                    }
                });
            }
            Op::PowScalar { x, exp } => {
                let (xd, e) = (val(*x), *exp);
                acc(*x, &mut |g| {
                    for ((gv, &u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        *gv = *gv + u * e * xv.powf(e - T::one());
                    }
                });
            }
            Op::PowVar { x, exp } => {
                let (xd, out) = (val(*x), nodes[i].value.data());
                let e = val(*exp)[0];
                acc(*x, &mut |g| {
                    for ((gv, &u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        *gv = *gv + u * e * xv.powf(e - T::one());
                    }
                });
                acc(*exp, &mut |g| {
                    let s: T = xd
                        .iter()
                        .zip(out)
                        .zip(up)
                        .filter(|((&xv, _), _)| xv > T::zero())
                        .map(|((&xv, &o), &u)| u * o * xv.ln())
                        .sum();
                    g[0] = g[0] + s;
                });
            }
            Op::Recip { x } => {
                let out = nodes[i].value.data();
                acc(*x, &mut |g| {
                    for ((gv, &u), &o) in g.iter_mut().zip(up).zip(out) {
                        *gv = *gv - u * o * o;
                    }
                });
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(*x, &mut |g| match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let scale = if *kind == ReduceKind::Mean {
                            T::of(1.0 / len as f64)
                        } else {
                            T::one()
                        };
                        for o in 0..outer {
                            for l in 0..len {
                                for k in 0..inner {
                                    let gi = (o * len + l) * inner + k;
                                    g[gi] = g[gi] + up[o * inner + k] * scale;
                                }
                            }
                        }
                    }
                    ReduceKind::Max => {
                        for o in 0..outer {
                            for k in 0..inner {
                                let l = argmax[o * inner + k];
                                let gi = (o * len + l) * inner + k;
                                g[gi] = g[gi] + up[o * inner + k];
                            }
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                acc(*x, &mut |g| g.iter_mut().for_each(|gv| *gv = *gv + up[0]));
            }
            Op::Narrow {
                x,
                outer,
                src_len,
                start,
                len,
                inner,
            } => {
                let (outer, src_len, start, len, inner) = (*outer, *src_len, *start, *len, *inner);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let dst = (o * src_len + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            g[dst + k] = g[dst + k] + up[src + k];
                        }
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                inner,
            } => {
                let total: usize = inputs.iter().map(|(_, l)| l).sum();
                let mut offset = 0;
                for &(p, l) in inputs {
                    acc(p, &mut |g| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * l * inner;
                            for k in 0..l * inner {
                                g[dst + k] = g[dst + k] + up[src + k];
                            }
                        }
                    });
                    offset += l;
                }
            }
            Op::GatherRows { x, rows, row_len } => {
                let rl = *row_len;
                acc(*x, &mut |g| {
                    for (o, &r) in rows.iter().enumerate() {
                        for k in 0..rl {
                            g[r * rl + k] = g[r * rl + k] + up[o * rl + k];
                        }
                    }
                });
            }
            Op::GroupMean { x, groups, row_len } => {
                let rl = *row_len;
                acc(*x, &mut |g| {
                    for (gi, grp) in groups.iter().enumerate() {
                        let w = T::of(1.0 / grp.len() as f64);
                        for &r in grp {
                            for k in 0..rl {
                                g[r * rl + k] = g[r * rl + k] + up[gi * rl + k] * w;
                            }
                        }
                    }
                });
            }
            Op::PairDistances { x, y, pairs, dim } => {
                let dim = *dim;
                let (xd, yd, out) = (val(*x), val(*y), nodes[i].value.data());
                let coef: Vec<T> = up.iter().zip(out).map(|(&u, &d)| u / d).collect();
                acc(*x, &mut |g| {
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        for k in 0..dim {
                            let diff = xd[a * dim + k] - yd[b * dim + k];
                            g[a * dim + k] = g[a * dim + k] + coef[p] * diff;
                        }
                    }
                });
                acc(*y, &mut |g| {
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        for k in 0..dim {
                            let diff = xd[a * dim + k] - yd[b * dim + k];
                            g[b * dim + k] = g[b * dim + k] - coef[p] * diff;
                        }
                    }
                });
            }
            Op::Select { x, idx } => {
                acc(*x, &mut |g| {
                    for (o, &j) in idx.iter().enumerate() {
                        g[j] = g[j] + up[o];
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let gd = val(*gamma);
                let mut sum_dy = zeros::<T>(c);
                let mut sum_dy_xhat = zeros::<T>(c);
                for r in 0..n {
                    for j in 0..c {
                        let u = up[r * c + j];
                        sum_dy[j] = sum_dy[j] + u;
                        sum_dy_xhat[j] = sum_dy_xhat[j] + u * xhat[r * c + j];
                    }
                }
                acc(*gamma, &mut |g| g.iter_mut().zip(&sum_dy_xhat).for_each(|(g, &s)| *g = *g + s));
                acc(*beta, &mut |g| g.iter_mut().zip(&sum_dy).for_each(|(g, &s)| *g = *g + s));
                let mode = *mode;
                acc(*x, &mut |g| {
                    let nf = T::of(n as f64);
                    for r in 0..n {
                        for j in 0..c {
                            let k = r * c + j;
                            let d = match mode {
                                Mode::Train => {
                                    gd[j] * inv_std[j] / nf
                                        * (nf * up[k] - sum_dy[j] - xhat[k] * sum_dy_xhat[j])
                                }
                                Mode::Eval => up[k] * gd[j] * inv_std[j],
                            };
                            g[k] = g[k] + d;
                        }
                    }
                });
            }
            Op::Pool2 { x, dims } => {
                let [b, h, w, c] = *dims;
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                acc(*x, &mut |g| {
                    for bi in 0..b {
                        for r in 0..ho {
                            for col in 0..wo {
                                let src = ((bi * ho + r) * wo + col) * c;
                                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let dst = ((bi * h + 2 * r + dr) * w + 2 * col + dc) * c;
                                    for ch in 0..c {
                                        g[dst + ch] = g[dst + ch] + up[src + ch] * quarter;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                rows,
            } => {
                let scale = up[0] / T::of(*rows as f64);
                acc(*logits, &mut |g| {
                    for ((gv, &p), &q) in g.iter_mut().zip(probs).zip(targets) {
                        *gv = *gv + scale * (p - q);
                    }
                });
            }
        }
    }
}

fn reduce_broadcast<T: Real>(g: &mut [T], up: &[T], bc: Broadcast, f: impl Fn(T, usize) -> T) {
    match bc {
        Broadcast::Same => {
            for (j, (gv, &u)) in g.iter_mut().zip(up).enumerate() {
                *gv = *gv + f(u, j);
            }
        }
        Broadcast::Scalar => {
            let s: T = up.iter().enumerate().map(|(j, &u)| f(u, j)).sum();
            g[0] = g[0] + s;
        }
        Broadcast::Row => {
            let n = g.len();
            for (j, &u) in up.iter().enumerate() {
                g[j % n] = g[j % n] + f(u, j);
            }
        }
    }
}

/// Row-major `[m, k] x [k, n]` product.
pub fn matmul_kernel<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = zeros::<T>(m * n);
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_scalar_product_rule() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[1, 1], &[2.0]));
        let b = g.constant(t(&[1, 1], &[3.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[6.0]);
        let s = g.sum_all(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn relu_dead_unit() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(-2.0));
        let y = g.relu(x).unwrap();
        assert_eq!(g.scalar_value(y), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn pow_sqrt_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(4.0));
        let y = g.pow_scalar(x, 0.5).unwrap();
        assert_eq!(g.scalar_value(y), 2.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn pow_negative_base_fractional_exponent_is_domain_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(-1.0));
        assert!(matches!(g.pow_scalar(x, 0.5), Err(Error::Domain { .. })));
        assert!(g.pow_scalar(x, 2.0).is_ok());
    }

    #[test]
    fn clamp_min_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.clamp_min(x, 1e-6).unwrap();
        assert_eq!(g.scalar_value(y), 1e-6);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn reductions() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let m = g.reduce(x, ReduceKind::Mean, 0).unwrap();
        assert_eq!(g.scalar_value(m), 2.0);

        let y = g.param(t(&[3], &[1.0, 5.0, 5.0]));
        let mx = g.reduce(y, ReduceKind::Max, 0).unwrap();
        assert_eq!(g.scalar_value(mx), 5.0);
        g.backward(mx).unwrap();
        assert_eq!(g.grad(y).unwrap(), &[0.0, 1.0, 0.0]);

        let z = g.param(t(&[2, 2], &[1.0, -1.0, 4.0, 0.5]));
        let s = g.reduce(z, ReduceKind::Sum, 1).unwrap();
        let s = g.sum_all(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(z).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn reduce_rejects_bad_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(g.reduce(x, ReduceKind::Sum, 1).is_err());
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(7.0));
        let y = g.mul(c, c).unwrap();
        let z = g.scale(x, 0.0).unwrap();
        let loss = g.add(y, z).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn broadcasting_limited_to_scalar_and_row() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let row = g.constant(Tensor::zeros(vec![3]));
        let col = g.constant(Tensor::zeros(vec![2]));
        let s = g.constant(Tensor::scalar(1.0));
        assert!(g.add(a, row).is_ok());
        assert!(g.add(a, s).is_ok());
        assert!(g.add(a, col).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes_and_eval_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 45.0]));
        let gamma = g.param(Tensor::full(vec![2], 1.0));
        let beta = g.param(Tensor::zeros(vec![2]));
        let mut stats = BatchNormStats::new(2);
        let y = g.batchnorm(x, gamma, beta, &mut stats, Mode::Train).unwrap();
        let d = g.value(y).data().to_vec();
        for ch in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| d[r * 2 + ch]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        // running mean moved 10% toward the batch mean
        assert!((stats.mean[0] - 0.25).abs() < 1e-12);

        let mut fresh = BatchNormStats::new(2);
        let y = g.batchnorm(x, gamma, beta, &mut fresh, Mode::Eval).unwrap();
        let scale = 1.0 / (1.0f64 + BN_EPS).sqrt();
        for (o, i) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((o - i * scale).abs() < 1e-12);
            assert!((o - i).abs() <= 1e-5 * i.abs());
        }
        assert_eq!(fresh, BatchNormStats::new(2));
    }

    #[test]
    fn batchnorm_single_row_train_is_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2]));
        let gamma = g.param(Tensor::full(vec![2], 1.0));
        let beta = g.param(Tensor::zeros(vec![2]));
        let mut stats = BatchNormStats::new(2);
        assert!(g.batchnorm(x, gamma, beta, &mut stats, Mode::Train).is_err());
        assert!(g.batchnorm(x, gamma, beta, &mut stats, Mode::Eval).is_ok());
    }

    #[test]
    fn finite_checks_surface_nan() {
        let mut g = Graph::<f64>::new().with_finite_checks(true);
        let x = g.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
        let mut quiet = Graph::<f64>::new();
        let x = quiet.constant(Tensor::scalar(f64::MAX));
        assert!(quiet.scale(x, 10.0).is_ok());
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.constant(t(&[2, 3, 4], &data));
        let parts: Vec<Var> = (0..3).map(|i| g.narrow(x, 1, i, 1).unwrap()).collect();
        let back = g.concat(&parts, 1).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }
}
