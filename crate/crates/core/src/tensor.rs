//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Values live on the tape; parameters are copied in as leaves through
//! [`ParamStore::bind`] and their gradients are accumulated back with
//! [`ParamStore::accumulate`]. Tensors are rank 1 or rank 2, row-major.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() || shape.len() > 2 {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("valid shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    pub fn vector(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(&[rows, cols], data)
    }

    /// Marks the tensor as a trainable parameter with a zeroed gradient slot.
    pub fn tracked(mut self) -> Tensor {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var, usize),
    SegmentSoftmax(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Dot(Var, Var),
    RowDot(Var, Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
}

#[derive(Debug)]
struct Record {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by tape variable.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Linear record of every operation in evaluation order.
#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

fn row_major_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.records.push(Record { shape, value, op });
        Var(self.records.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.records[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.records[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let r = &self.records[v.0];
        Tensor::new(&r.shape, r.value.clone()).unwrap()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a), self.value(b), n, k, m);
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(self.shape(a).to_vec(), out, rec))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    /// Adds a row vector (length = columns of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = row_major_dims(self.shape(a));
        if self.shape(a).len() != 2 || self.value(row).len() != c {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row).to_vec();
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(&r).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|&x| x + c).collect();
        self.push(self.shape(a).to_vec(), out, Op::AddScalar(a))
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(self.mismatch("mul_scalar_var", a, s));
        }
        let k = self.value(s)[0];
        let out = self.value(a).iter().map(|&x| x * k).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::MulScalarVar(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Tanh(a))
    }

    /// Max-stabilised softmax along `axis` (0 = down columns, 1 = across rows).
    /// Rank-1 tensors only accept axis 0.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let (r, c) = if shape.len() == 1 { (shape[0], 1) } else { (shape[0], shape[1]) };
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        if axis == 1 {
            for i in 0..r {
                softmax_strided(x, &mut out, i * c, 1, c);
            }
        } else {
            for j in 0..c {
                softmax_strided(x, &mut out, j, c, r);
            }
        }
        Ok(self.push(shape, out, Op::Softmax(a, axis)))
    }

    /// Column-wise softmax within consecutive row segments: rows
    /// `offsets[s]..offsets[s+1]` form segment `s`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (r, c) = dims2(&shape);
        if offsets.last().copied() != Some(r) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: shape,
                rhs: vec![offsets.last().copied().unwrap_or(0)],
            });
        }
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for w in offsets.windows(2) {
            let len = w[1] - w[0];
            if len == 0 {
                continue;
            }
            for j in 0..c {
                softmax_strided(x, &mut out, w[0] * c + j, c, len);
            }
        }
        Ok(self.push(shape, out, Op::SegmentSoftmax(a, offsets)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Column means of a matrix, as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (r, c) = dims2(&shape);
        if shape.len() != 2 || r == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: shape,
                rhs: vec![],
            });
        }
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(vec![1, c], out, Op::MeanRows(a)))
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(self.mismatch("dot", a, b));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![1], vec![s], Op::Dot(a, b)))
    }

    /// Row-wise inner products of two `n x c` matrices, giving a length-n vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (r, c) = dims2(self.shape(a));
        let (va, vb) = (self.value(a), self.value(b));
        let out = (0..r)
            .map(|i| va[i * c..(i + 1) * c].iter().zip(&vb[i * c..(i + 1) * c]).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(vec![r], out, Op::RowDot(a, b)))
    }

    /// Concatenates matrices along `axis` (0 = stack rows, 1 = join columns).
    /// Rank-1 inputs are joined end to end with axis 0.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Shape {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rank = self.shape(first).len();
        if axis >= rank {
            return Err(Error::Shape {
                op: "concat",
                lhs: self.shape(first).to_vec(),
                rhs: vec![axis],
            });
        }
        for &p in parts {
            let (s0, s1) = (self.shape(first), self.shape(p));
            if s1.len() != rank || (rank == 2 && s0[1 - axis] != s1[1 - axis]) {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let (shape, out) = if rank == 1 || axis == 0 {
            let out: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
            let mut shape = self.shape(first).to_vec();
            shape[0] = parts.iter().map(|&p| self.shape(p)[0]).sum();
            (shape, out)
        } else {
            let r = self.shape(first)[0];
            let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for (&p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
                }
            }
            (vec![r, total], out)
        };
        Ok(self.push(shape, out, Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bad = || Error::Shape {
            op: "slice",
            lhs: shape.clone(),
            rhs: vec![axis, start, len],
        };
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(bad());
        }
        let x = self.value(a);
        let (out_shape, out) = if shape.len() == 1 {
            (vec![len], x[start..start + len].to_vec())
        } else if axis == 0 {
            let c = shape[1];
            (vec![len, c], x[start * c..(start + len) * c].to_vec())
        } else {
            let (r, c) = (shape[0], shape[1]);
            let out = (0..r).flat_map(|i| x[i * c + start..i * c + start + len].iter().copied()).collect();
            (vec![r, len], out)
        };
        Ok(self.push(out_shape, out, Op::Slice(a, axis, start, len)))
    }

    /// Selects rows `idx` of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (r, c) = dims2(&shape);
        if shape.len() != 2 || idx.iter().any(|&i| i >= r) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: shape,
                rhs: vec![idx.iter().copied().max().unwrap_or(0)],
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        Ok(self.push(vec![idx.len(), c], out, Op::GatherRows(a, idx)))
    }

    /// Sums row `e` of `a` into output row `idx[e]`; output has `n` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (r, c) = dims2(&shape);
        if shape.len() != 2 || idx.len() != r || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: shape,
                rhs: vec![idx.len(), n],
            });
        }
        let x = self.value(a);
        let mut out = vec![0.0; n * c];
        for (e, &i) in idx.iter().enumerate() {
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(&x[e * c..(e + 1) * c]) {
                *o += v;
            }
        }
        Ok(self.push(vec![n, c], out, Op::ScatterAddRows(a, idx)))
    }

    /// Sign pattern of every ReLU input on the tape; a change in this
    /// pattern under perturbation marks a non-differentiable neighbourhood.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for rec in &self.records {
            if let Op::Relu(a) = rec.op {
                sig.extend(self.value(a).iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    /// Reverse pass from a scalar. Each record is visited once, in reverse
    /// evaluation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rec = &self.records[i];
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            let n = self.records[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &rec.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims2(self.shape(*a));
                let m = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &|ga| {
                    // dA = G * B^T
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let brow = &vb[kk * m..(kk + 1) * m];
                            ga[r * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &|gb| {
                    // dB = A^T * G
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let a_rk = va[r * k + kk];
                            if a_rk == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *o += a_rk * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::AddRow(a, row) => {
                acc(*a, &|ga| add_into(ga, g));
                let c = self.value(*row).len();
                acc(*row, &|gr| {
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &|ga| ga.iter_mut().zip(g).zip(vb).for_each(|((o, &x), &y)| *o += x * y));
                acc(*b, &|gb| gb.iter_mut().zip(g).zip(va).for_each(|((o, &x), &y)| *o += x * y));
            }
            Op::Scale(a, c) => acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += c * x)),
            Op::AddScalar(a) => acc(*a, &|ga| add_into(ga, g)),
            Op::MulScalarVar(a, s) => {
                let k = self.value(*s)[0];
                let va = self.value(*a);
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += k * x));
                let ds: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                acc(*s, &|gs| gs[0] += ds);
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                acc(*a, &|ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(va) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &rec.value;
                acc(*a, &|ga| ga.iter_mut().zip(g).zip(y).for_each(|((o, &x), &t)| *o += x * (1.0 - t * t)));
            }
            Op::Softmax(a, axis) => {
                let (r, c) = dims2(&rec.shape);
                let y = &rec.value;
                acc(*a, &|ga| {
                    if *axis == 1 {
                        for i in 0..r {
                            softmax_grad_strided(y, g, ga, i * c, 1, c);
                        }
                    } else {
                        for j in 0..c {
                            softmax_grad_strided(y, g, ga, j, c, r);
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, offsets) => {
                let (_, c) = dims2(&rec.shape);
                let y = &rec.value;
                acc(*a, &|ga| {
                    for w in offsets.windows(2) {
                        let len = w[1] - w[0];
                        for j in 0..c {
                            if len > 0 {
                                softmax_grad_strided(y, g, ga, w[0] * c + j, c, len);
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &|ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::MeanRows(a) => {
                let (r, c) = dims2(self.shape(*a));
                acc(*a, &|ga| {
                    for chunk in ga.chunks_mut(c) {
                        chunk.iter_mut().zip(g).for_each(|(o, &x)| *o += x / r as f64);
                    }
                });
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &|ga| ga.iter_mut().zip(vb).for_each(|(o, &y)| *o += g[0] * y));
                acc(*b, &|gb| gb.iter_mut().zip(va).for_each(|(o, &y)| *o += g[0] * y));
            }
            Op::RowDot(a, b) => {
                let (_, c) = dims2(self.shape(*a));
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &|ga| {
                    for (e, &ge) in g.iter().enumerate() {
                        for k in e * c..(e + 1) * c {
                            ga[k] += ge * vb[k];
                        }
                    }
                });
                acc(*b, &|gb| {
                    for (e, &ge) in g.iter().enumerate() {
                        for k in e * c..(e + 1) * c {
                            gb[k] += ge * va[k];
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let rank = rec.shape.len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, &|gp| add_into(gp, &g[off..off + n]));
                        off += n;
                    }
                } else {
                    let (r, total) = (rec.shape[0], rec.shape[1]);
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        acc(p, &|gp| {
                            for i in 0..r {
                                add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::Slice(a, axis, start, len) => {
                let shape = self.shape(*a).to_vec();
                acc(*a, &|ga| {
                    if shape.len() == 1 {
                        add_into(&mut ga[*start..start + len], g);
                    } else if *axis == 0 {
                        let c = shape[1];
                        add_into(&mut ga[start * c..(start + len) * c], g);
                    } else {
                        let c = shape[1];
                        for i in 0..shape[0] {
                            add_into(&mut ga[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let (_, c) = dims2(self.shape(*a));
                acc(*a, &|ga| {
                    for (e, &i) in idx.iter().enumerate() {
                        add_into(&mut ga[i * c..(i + 1) * c], &g[e * c..(e + 1) * c]);
                    }
                });
            }
            Op::ScatterAddRows(a, idx) => {
                let (_, c) = dims2(self.shape(*a));
                acc(*a, &|ga| {
                    for (e, &i) in idx.iter().enumerate() {
                        add_into(&mut ga[e * c..(e + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, &x)| *o += x);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for kk in 0..k {
            let x = a[r * k + kk];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o += x * y;
            }
        }
    }
    out
}

fn softmax_strided(x: &[f64], out: &mut [f64], start: usize, stride: usize, len: usize) {
    let idx = |t: usize| start + t * stride;
    let max = (0..len).map(|t| x[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for t in 0..len {
        let e = (x[idx(t)] - max).exp();
        out[idx(t)] = e;
        total += e;
    }
    for t in 0..len {
        out[idx(t)] /= total;
    }
}

fn softmax_grad_strided(y: &[f64], g: &[f64], ga: &mut [f64], start: usize, stride: usize, len: usize) {
    let idx = |t: usize| start + t * stride;
    let dot: f64 = (0..len).map(|t| y[idx(t)] * g[idx(t)]).sum();
    for t in 0..len {
        ga[idx(t)] += y[idx(t)] * (g[idx(t)] - dot);
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape variables for every parameter bound in one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Adds backward-pass gradients into every tracked parameter's slot.
    /// Parameters that did not reach the loss keep their gradient unchanged.
    pub fn accumulate(&mut self, bindings: &Bindings, grads: &Gradients) {
        for (name, t) in self.tensors.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let Some(&v) = bindings.vars.get(name) else { continue };
            if let (Some(slot), Some(g)) = (t.grad.as_mut(), grads.get(v)) {
                add_into(slot, g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }
}

/// Backward from `loss` straight into the parameter store.
pub fn backward(tape: &Tape, loss: Var, params: &mut ParamStore, bindings: &Bindings) -> Result<()> {
    let grads = tape.backward(loss)?;
    params.accumulate(bindings, &grads);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbations crossed a ReLU kink.
    pub excluded: usize,
    /// Entries where both gradients are below [`GRAD_RESOLUTION`]; their
    /// relative error is roundoff and is not counted.
    pub flat: usize,
    /// Parameter, entry, analytic and numeric value at the maximum.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Gradients below this are left out of the relative error: at `eps = 1e-3`
/// the difference quotient of an `O(10)` loss carries about `1e-11` of
/// roundoff, which would dominate the ratio.
pub const GRAD_RESOLUTION: f64 = 1e-7;

/// Compares analytic gradients against the five-point central difference
/// for every entry of every tracked parameter. Relative error is
/// `|a - n| / (|a| + |n|)`.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::config("grad_check eps must be positive"));
    }
    let eval = |p: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let out = f(&mut tape, &b)?;
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value {v}")));
        }
        Ok((v, tape.kink_signature()))
    };
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let out = f(&mut tape, &bindings)?;
    if !tape.scalar_value(out).is_finite() {
        return Err(Error::NonFinite(format!("function value {}", tape.scalar_value(out))));
    }
    let base_sig = tape.kink_signature();
    let grads = tape.backward(out)?;
    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        flat: 0,
        worst: None,
    };
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    for name in names {
        let t = &params.tensors[&name];
        if !t.requires_grad {
            continue;
        }
        let var = bindings.vars[&name];
        let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        for i in 0..t.numel() {
            let orig = t.data[i];
            let mut f = [0.0; 4];
            let mut crossed = false;
            for (k, step) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                work.tensors.get_mut(&name).unwrap().data[i] = orig + step * eps;
                let (v, sig) = eval(&work)?;
                f[k] = v;
                crossed |= sig != base_sig;
            }
            work.tensors.get_mut(&name).unwrap().data[i] = orig;
            if crossed {
                report.excluded += 1;
                continue;
            }
            let a = analytic[i];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}[{i}]")));
            }
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * eps);
            if a.abs() + numeric.abs() < GRAD_RESOLUTION {
                report.flat += 1;
                continue;
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
