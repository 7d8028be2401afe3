use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const CE_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Act(Var, Activation),
    Concat(Var, Var),
    Softmax(Var, Option<Vec<bool>>),
    WeightedSum(Var, Var),
    Reshape(Var),
    Scale(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a single backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the node
    /// does not require gradients or is unreachable from the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds the vector `bias` to every row along the last axis of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.is_empty() || cols_of(sx) != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let shape = sx.to_vec();
        let n = sb[0];
        let bv = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, bias), rg))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| 1.0 - v).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::OneMinus(x), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::Act(x, kind), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Concatenates along the last axis. Both inputs are rank 1, or both are
    /// rank 2 with the same number of rows.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = match (sa.len(), sb.len()) {
            (1, 1) => true,
            (2, 2) => sa[0] == sb[0],
            _ => false,
        };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: sa,
                right: sb,
            });
        }
        let rows = if sa.len() == 2 { sa[0] } else { 1 };
        let (p, q) = (cols_of(&sa), cols_of(&sb));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&av[r * p..(r + 1) * p]);
            data.extend_from_slice(&bv[r * q..(r + 1) * q]);
        }
        let shape = if sa.len() == 2 {
            vec![rows, p + q]
        } else {
            vec![p + q]
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(a, b), rg))
    }

    /// Softmax over the last axis restricted to positions where `mask` is
    /// true. Masked positions get exactly zero. Each row is shifted by its
    /// maximum unmasked score before exponentiation.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var, TensorError> {
        if mask.len() != self.value(scores).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: self.shape(scores).to_vec(),
                right: vec![mask.len()],
            });
        }
        self.softmax_impl(scores, Some(mask.to_vec()))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var, TensorError> {
        self.softmax_impl(scores, None)
    }

    fn softmax_impl(&mut self, scores: Var, mask: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let shape = self.shape(scores).to_vec();
        if shape.is_empty() || shape.len() > 2 {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: "1 or 2",
                shape,
            });
        }
        let n = cols_of(&shape);
        let sv = self.value(scores).data();
        let mut out = vec![0.0; sv.len()];
        for (r, (orow, srow)) in out
            .chunks_mut(n.max(1))
            .zip(sv.chunks(n.max(1)))
            .enumerate()
        {
            let live = |i: usize| mask.as_ref().is_none_or(|m| m[r * n + i]);
            let max = (0..n)
                .filter(|&i| live(i))
                .map(|i| srow[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Degenerate {
                    op: "masked_softmax",
                    reason: format!("row {r} has no unmasked position"),
                });
            }
            let mut total = 0.0;
            for i in (0..n).filter(|&i| live(i)) {
                let e = (srow[i] - max).exp();
                orow[i] = e;
                total += e;
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(&[scores]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(scores, mask), rg))
    }

    /// `out[b, :] = sum_n weights[b, n] * values[b, n, :]`.
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var, TensorError> {
        let (sw, sv) = (self.shape(weights).to_vec(), self.shape(values).to_vec());
        if sw.len() != 2 || sv.len() != 3 || sw[0] != sv[0] || sw[1] != sv[1] {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                left: sw,
                right: sv,
            });
        }
        let (b, n, d) = (sv[0], sv[1], sv[2]);
        let (wv, vv) = (self.value(weights).data(), self.value(values).data());
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let orow = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                let w = wv[i * n + j];
                let vrow = &vv[(i * n + j) * d..(i * n + j + 1) * d];
                for (o, &x) in orow.iter_mut().zip(vrow) {
                    *o += w * x;
                }
            }
        }
        let rg = self.rg(&[weights, values]);
        Ok(self.push(
            Tensor::new(vec![b, d], out)?,
            Op::WeightedSum(weights, values),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Multiplies elementwise by constant factors (used for dropout masks).
    pub fn scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var, TensorError> {
        let t = self.value(x);
        if factors.len() != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "scale",
                left: t.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = t.data().iter().zip(&factors).map(|(v, f)| v * f).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Scale(x, factors), rg))
    }

    /// Mean of `-ln(max(p[target], 1e-12))` over the rows of `probs`
    /// (`[C]` for a single instance, `[B, C]` for a batch).
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(probs).to_vec();
        let (rows, classes) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(TensorError::Rank {
                    op: "cross_entropy",
                    expected: "1 or 2",
                    shape,
                })
            }
        };
        if targets.len() != rows || rows == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: vec![targets.len()],
            });
        }
        let pv = self.value(probs).data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(TensorError::TargetOutOfRange { target: t, classes });
            }
            let row = &pv[r * classes..(r + 1) * classes];
            let mass: f64 = row.iter().sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(TensorError::Degenerate {
                    op: "cross_entropy",
                    reason: format!("row {r} sums to {mass}"),
                });
            }
            total -= row[t].max(CE_FLOOR).ln();
        }
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::CrossEntropy(probs, targets.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                if !node.requires_grad {
                    return None;
                }
                g.map(|data| Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let out = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = self.value(*bias).numel();
                acc(*bias, &mut |gb| {
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, &v), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += v * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &v), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += v * x;
                    }
                });
            }
            Op::OneMinus(x) => acc(*x, &mut |gx| {
                for (o, &v) in gx.iter_mut().zip(g) {
                    *o -= v;
                }
            }),
            Op::Act(x, kind) => acc(*x, &mut |gx| {
                for ((o, &v), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += v * match kind {
                        Activation::Tanh => 1.0 - y * y,
                        Activation::Sigmoid => y * (1.0 - y),
                    };
                }
            }),
            Op::Concat(a, b) => {
                let (p, q) = (cols_of(self.shape(*a)), cols_of(self.shape(*b)));
                let rows = g.len().checked_div(p + q).unwrap_or(0);
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * p..(r + 1) * p],
                            &g[r * (p + q)..r * (p + q) + p],
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..rows {
                        add_into(
                            &mut gb[r * q..(r + 1) * q],
                            &g[r * (p + q) + p..(r + 1) * (p + q)],
                        );
                    }
                });
            }
            Op::Softmax(x, mask) => {
                let n = cols_of(node.value.shape()).max(1);
                acc(*x, &mut |gx| {
                    for (r, (yrow, grow)) in out.chunks(n).zip(g.chunks(n)).enumerate() {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, v)| y * v).sum();
                        for i in 0..n {
                            if mask.as_ref().is_some_and(|m| !m[r * n + i]) {
                                continue;
                            }
                            gx[r * n + i] += yrow[i] * (grow[i] - dot);
                        }
                    }
                });
            }
            Op::WeightedSum(w, v) => {
                let sv = self.shape(*v);
                let (b, n, d) = (sv[0], sv[1], sv[2]);
                let (wv, vv) = (self.value(*w).data(), self.value(*v).data());
                acc(*w, &mut |gw| {
                    for i in 0..b {
                        let grow = &g[i * d..(i + 1) * d];
                        for j in 0..n {
                            let vrow = &vv[(i * n + j) * d..(i * n + j + 1) * d];
                            gw[i * n + j] += grow.iter().zip(vrow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*v, &mut |gv| {
                    for i in 0..b {
                        let grow = &g[i * d..(i + 1) * d];
                        for j in 0..n {
                            let weight = wv[i * n + j];
                            for (o, &x) in gv[(i * n + j) * d..(i * n + j + 1) * d]
                                .iter_mut()
                                .zip(grow)
                            {
                                *o += weight * x;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Scale(x, factors) => acc(*x, &mut |gx| {
                for ((o, &v), &f) in gx.iter_mut().zip(g).zip(factors) {
                    *o += v * f;
                }
            }),
            Op::CrossEntropy(p, targets) => {
                let pv = self.value(*p).data();
                let classes = cols_of(self.shape(*p));
                let scale = g[0] / targets.len() as f64;
                acc(*p, &mut |gp| {
                    for (r, &t) in targets.iter().enumerate() {
                        let prob = pv[r * classes + t];
                        if prob > CE_FLOOR {
                            gp[r * classes + t] -= scale / prob;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}
