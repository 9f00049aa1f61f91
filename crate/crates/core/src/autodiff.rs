//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass in execution
//! order, which is already a topological order of the compute graph.
//! [`Tape::backward`] walks it once in reverse. Vectors are `1 × n`
//! matrices; there is no implicit broadcasting.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for shape {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn matmul(&self, other: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    ScalarMul(usize, f64),
    /// Multiply every entry by a `1 × 1` tensor.
    ScaleBy(usize, usize),
    Relu(usize),
    /// Column sums, `r × c → 1 × c`.
    RowSum(usize),
    /// Column means, `r × c → 1 × c`.
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    SquaredNorm(usize),
    Sum(usize),
    GatherRows(usize, Vec<usize>),
    ScatterAddRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Dynamic compute graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar loss with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.grads[v.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.id].value.shape()
    }

    /// Trainable input.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.id].value.data[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.1 != sb.0 {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} · {}x{}", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)
        };
        Ok(self.push(value, self.needs(&[a.id, b.id]), Op::MatMul(a.id, b.id)))
    }

    fn elementwise(&self, op: &'static str, a: Var, b: Var, sign: f64) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.id].value, &nodes[b.id].value);
            Tensor {
                rows: sa.0,
                cols: sa.1,
                data: x.data.iter().zip(&y.data).map(|(p, q)| p + sign * q).collect(),
            }
        };
        let node_op = if sign > 0.0 {
            Op::Add(a.id, b.id)
        } else {
            Op::Sub(a.id, b.id)
        };
        Ok(self.push(value, self.needs(&[a.id, b.id]), node_op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, 1.0)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, -1.0)
    }

    pub fn scalar_mul(&self, a: Var, k: f64) -> Var {
        let value = self.nodes.borrow()[a.id].value.map(|x| k * x);
        self.push(value, self.needs(&[a.id]), Op::ScalarMul(a.id, k))
    }

    /// `a · s` for a `1 × 1` tensor `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        if self.shape_of(s) != (1, 1) {
            let ss = self.shape_of(s);
            return Err(Error::shape("scale_by", format!("scale is {}x{}", ss.0, ss.1)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let k = nodes[s.id].value.data[0];
            nodes[a.id].value.map(|x| k * x)
        };
        Ok(self.push(value, self.needs(&[a.id, s.id]), Op::ScaleBy(a.id, s.id)))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.id].value.map(|x| x.max(0.0));
        self.push(value, self.needs(&[a.id]), Op::Relu(a.id))
    }

    fn column_sums(t: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(1, t.cols);
        for r in 0..t.rows {
            for (o, x) in out.data.iter_mut().zip(t.row_slice(r)) {
                *o += x;
            }
        }
        out
    }

    pub fn row_sum(&self, a: Var) -> Var {
        let value = Self::column_sums(&self.nodes.borrow()[a.id].value);
        self.push(value, self.needs(&[a.id]), Op::RowSum(a.id))
    }

    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let (r, _) = self.shape_of(a);
        if r == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let value = Self::column_sums(&self.nodes.borrow()[a.id].value).map(|x| x / r as f64);
        Ok(self.push(value, self.needs(&[a.id]), Op::MeanRows(a.id)))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape_of(p).0)
            .ok_or_else(|| Error::shape("concat_cols", "no operands"))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape_of(p).0 != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {rows} vs {}", self.shape_of(bad).0),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let cols: usize = parts.iter().map(|p| nodes[p.id].value.cols).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row_slice(r));
                }
            }
            Tensor { rows, cols, data }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs(&ids);
        Ok(self.push(value, rg, Op::ConcatCols(ids)))
    }

    pub fn squared_norm(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes.borrow()[a.id].value.data.iter().map(|x| x * x).sum());
        self.push(value, self.needs(&[a.id]), Op::SquaredNorm(a.id))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes.borrow()[a.id].value.data.iter().sum());
        self.push(value, self.needs(&[a.id]), Op::Sum(a.id))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.id].value;
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in index {
                data.extend_from_slice(src.row_slice(i));
            }
            Tensor {
                rows: index.len(),
                cols: c,
                data,
            }
        };
        Ok(self.push(value, self.needs(&[a.id]), Op::GatherRows(a.id, index.to_vec())))
    }

    /// Output row `j` is the sum of the rows `k` of `a` with `index[k] == j`.
    pub fn scatter_add_rows(&self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        if index.len() != r {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices for {r} rows", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("target row {bad} of {out_rows}"),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.id].value;
            let mut out = Tensor::zeros(out_rows, c);
            for (k, &j) in index.iter().enumerate() {
                for (o, x) in out.data[j * c..(j + 1) * c].iter_mut().zip(src.row_slice(k)) {
                    *o += x;
                }
            }
            out
        };
        Ok(self.push(
            value,
            self.needs(&[a.id]),
            Op::ScatterAddRows(a.id, index.to_vec()),
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node it
    /// depends on. Contributions from multiple uses are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", shape.0, shape.1),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.matmul(&val(*b).transpose()));
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, val(*a).transpose().matmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::ScalarMul(a, k) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.map(|x| k * x));
                    }
                }
                Op::ScaleBy(a, s) => {
                    let k = val(*s).data[0];
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.map(|x| k * x));
                    }
                    if wants(*s) {
                        let dot: f64 = g.data.iter().zip(&val(*a).data).map(|(p, q)| p * q).sum();
                        accumulate(&mut grads, *s, Tensor::scalar(dot));
                    }
                }
                Op::Relu(a) => {
                    if wants(*a) {
                        let input = val(*a);
                        let data = g
                            .data
                            .iter()
                            .zip(&input.data)
                            .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                            .collect();
                        accumulate(
                            &mut grads,
                            *a,
                            Tensor {
                                rows: g.rows,
                                cols: g.cols,
                                data,
                            },
                        );
                    }
                }
                Op::RowSum(a) | Op::MeanRows(a) => {
                    if wants(*a) {
                        let (r, c) = val(*a).shape();
                        let k = if matches!(node.op, Op::MeanRows(_)) {
                            1.0 / r as f64
                        } else {
                            1.0
                        };
                        let mut data = Vec::with_capacity(r * c);
                        for _ in 0..r {
                            data.extend(g.data.iter().map(|x| k * x));
                        }
                        accumulate(&mut grads, *a, Tensor { rows: r, cols: c, data });
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = val(p).shape();
                        if wants(p) {
                            let mut data = Vec::with_capacity(r * c);
                            for row in 0..r {
                                let start = row * g.cols + offset;
                                data.extend_from_slice(&g.data[start..start + c]);
                            }
                            accumulate(&mut grads, p, Tensor { rows: r, cols: c, data });
                        }
                        offset += c;
                    }
                }
                Op::SquaredNorm(a) => {
                    if wants(*a) {
                        let k = 2.0 * g.data[0];
                        accumulate(&mut grads, *a, val(*a).map(|x| k * x));
                    }
                }
                Op::Sum(a) => {
                    if wants(*a) {
                        let k = g.data[0];
                        accumulate(&mut grads, *a, val(*a).map(|_| k));
                    }
                }
                Op::GatherRows(a, index) => {
                    if wants(*a) {
                        let (r, c) = val(*a).shape();
                        let mut out = Tensor::zeros(r, c);
                        for (k, &i) in index.iter().enumerate() {
                            for (o, x) in out.data[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                                *o += x;
                            }
                        }
                        accumulate(&mut grads, *a, out);
                    }
                }
                Op::ScatterAddRows(a, index) => {
                    if wants(*a) {
                        let c = g.cols;
                        let mut data = Vec::with_capacity(index.len() * c);
                        for &j in index {
                            data.extend_from_slice(g.row_slice(j));
                        }
                        accumulate(
                            &mut grads,
                            *a,
                            Tensor {
                                rows: index.len(),
                                cols: c,
                                data,
                            },
                        );
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` given matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[k].len() != p.data.len() {
                return Err(Error::shape("adam_step", format!("parameter {k} changed shape")));
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.data.len() {
                p.data[i] -= self.lr * self.weight_decay * p.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-1.0, 2.0]));
        assert_eq!(tape.value(tape.relu(x)).data(), &[0.0, 2.0]);

        let a = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i2 = tape.constant(Tensor::identity(2));
        let av = tape.constant(a.clone());
        assert_eq!(tape.value(tape.matmul(i2, av).unwrap()), a);

        let v = tape.constant(Tensor::row(vec![3.0, 4.0]));
        assert_eq!(tape.scalar_value(tape.squared_norm(v)), 25.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul") && err.to_string().contains("2x3"));
        assert!(tape.add(a, tape.constant(Tensor::zeros(3, 2))).is_err());
        assert!(tape.scale_by(a, b).is_err());
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let w = tape.param(Tensor::row(vec![3.0, 4.0]));
        let loss = tape.squared_norm(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w, (1, 2)).data(), &[6.0, 8.0]);

        let tape = Tape::new();
        let w = tape.param(Tensor::row(vec![-1.0, 2.0]));
        let loss = tape.sum(tape.relu(w));
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w, (1, 2)).data(), &[0.0, 1.0]);
    }

    #[test]
    fn reused_value_accumulates() {
        // loss = |w|² + 3·sum(w) → grad = 2w + 3
        let tape = Tape::new();
        let w = tape.param(Tensor::row(vec![1.0, -2.0]));
        let a = tape.squared_norm(w);
        let b = tape.scalar_mul(tape.sum(w), 3.0);
        let loss = tape.add(a, b).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w, (1, 2)).data(), &[5.0, -1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let w = tape.param(Tensor::row(vec![0.5, 0.5]));
        let loss = tape.squared_norm(tape.sub(w, c).unwrap());
        let g = tape.backward(loss).unwrap();
        assert!(g.try_get(c).is_none());
        assert_eq!(g.get(w, (1, 2)).data(), &[-1.0, -3.0]);
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Composite touching every op; returns (loss, leaf vars).
    fn composite(tape: &Tape, leaves: &[Tensor]) -> (Var, Vec<Var>) {
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let (x, w1, w2, s, e) = (vars[0], vars[1], vars[2], vars[3], vars[4]);
        let h = tape.relu(tape.matmul(x, w1).unwrap());
        let gathered = tape.gather_rows(h, &[0, 2, 1, 2]).unwrap();
        let msg = tape.relu(tape.add(gathered, tape.matmul(e, w1).unwrap()).unwrap());
        let agg = tape.scatter_add_rows(msg, &[1, 0, 2, 0], 3).unwrap();
        let z = tape.add(tape.add(h, tape.scale_by(h, s).unwrap()).unwrap(), agg).unwrap();
        let out = tape.matmul(tape.relu(z), w2).unwrap();
        let pooled = tape.concat_cols(&[tape.mean_rows(out).unwrap(), tape.row_sum(h)]).unwrap();
        let shifted = tape.sub(pooled, tape.scalar_mul(pooled, 0.3)).unwrap();
        (tape.squared_norm(shifted), vars)
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let leaves = vec![
                random(&mut rng, 3, 2),
                random(&mut rng, 2, 4),
                random(&mut rng, 4, 3),
                random(&mut rng, 1, 1),
                random(&mut rng, 4, 2),
            ];
            let tape = Tape::new();
            let (loss, vars) = composite(&tape, &leaves);
            let grads = tape.backward(loss).unwrap();
            let eval = |ls: &[Tensor]| {
                let t = Tape::new();
                let (l, _) = composite(&t, ls);
                t.scalar_value(l)
            };
            let h = 1e-5;
            for (k, leaf) in leaves.iter().enumerate() {
                let analytic = grads.get(vars[k], leaf.shape());
                for i in 0..leaf.data().len() {
                    let mut plus = leaves.clone();
                    plus[k].data_mut()[i] += h;
                    let mut minus = leaves.clone();
                    minus[k].data_mut()[i] -= h;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let a = analytic.data()[i];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4,
                        "seed {seed} leaf {k}[{i}]: {a} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaves = vec![
            random(&mut rng, 3, 2),
            random(&mut rng, 2, 4),
            random(&mut rng, 4, 3),
            random(&mut rng, 1, 1),
            random(&mut rng, 4, 2),
        ];
        let run = || {
            let tape = Tape::new();
            let (loss, vars) = composite(&tape, &leaves);
            let g = tape.backward(loss).unwrap();
            vars.iter()
                .zip(&leaves)
                .flat_map(|(&v, l)| g.get(v, l.shape()).data().to_vec())
                .map(f64::to_bits)
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_examples() {
        let mut p = Tensor::row(vec![1.0, -2.0]);
        let mut opt = Adam::new(0.1, 0.0);
        opt.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        let mut w = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.1, 0.0);
        opt.step(&mut [&mut w], &[Tensor::scalar(2.0)]).unwrap();
        assert!(w.to_scalar() < 1.0);

        let mut w = Tensor::row(vec![1.0, -0.7]);
        let mut opt = Adam::new(0.05, 0.0);
        for _ in 0..500 {
            let g = Tensor::row(w.data().iter().map(|x| 2.0 * x).collect());
            opt.step(&mut [&mut w], &[g]).unwrap();
        }
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
        assert_eq!(opt.steps_taken(), 500);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_without_gradient() {
        let mut p = Tensor::scalar(2.0);
        let mut opt = Adam::new(0.1, 0.5);
        opt.step(&mut [&mut p], &[Tensor::scalar(0.0)]).unwrap();
        assert!((p.to_scalar() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
