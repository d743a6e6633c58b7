//! Reverse-mode differentiation over a linear tape of matrix operations.

use super::matrix::Matrix;

pub type NodeId = usize;

enum Op {
    Input,
    Param(usize),
    /// `x · W + b` with `b` a `1 x out` row.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh(NodeId),
    HCat(NodeId, NodeId),
    VStack(Vec<NodeId>),
    Rows { x: NodeId, start: usize },
    /// Scalar `mean((x - target)^2)`.
    MseConst { x: NodeId, target: Matrix },
    /// Scalar `sum c_k * x_k` over `1 x 1` inputs.
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.data()[0]
    }

    /// A constant; gradients stop here.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// A trainable leaf whose gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: Matrix) -> NodeId {
        self.push(value, Op::Param(index), true)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(x).matmul(self.value(w));
        out.add_row(self.value(b).data());
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Affine { x, w, b }, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.map_inplace(f64::tanh);
        let needs = self.needs(x);
        self.push(out, Op::Tanh(x), needs)
    }

    pub fn hcat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).hcat(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::HCat(a, b), needs)
    }

    pub fn vstack(&mut self, parts: Vec<NodeId>) -> NodeId {
        let out = Matrix::vstack(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::VStack(parts), needs)
    }

    pub fn rows(&mut self, x: NodeId, start: usize, count: usize) -> NodeId {
        let out = self.value(x).row_block(start, count);
        let needs = self.needs(x);
        self.push(out, Op::Rows { x, start }, needs)
    }

    pub fn mse_const(&mut self, x: NodeId, target: Matrix) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.shape(), target.shape(), "mse target shape mismatch");
        let n = v.data().len().max(1) as f64;
        let mse = v.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let needs = self.needs(x);
        self.push(Matrix::from_vec(1, 1, vec![mse]), Op::MseConst { x, target }, needs)
    }

    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> NodeId {
        let s = terms.iter().map(|&(id, c)| c * self.scalar(id)).sum();
        let needs = terms.iter().any(|&(id, _)| self.needs(id));
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::WeightedSum(terms), needs)
    }

    /// Gradients of the scalar `root` with respect to every parameter leaf,
    /// indexed by the parameter index given to [`Tape::param`].
    pub fn backward(&self, root: NodeId, n_params: usize) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Matrix>> = (0..n_params).map(|_| None).collect();
        grads[root] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(k) => accumulate(&mut out[*k], g),
                Op::Affine { x, w, b } => {
                    if self.needs(*x) {
                        let dx = g.matmul_t(self.value(*w));
                        accumulate(&mut grads[*x], dx);
                    }
                    if self.needs(*w) {
                        let dw = self.value(*x).t_matmul(&g);
                        accumulate(&mut grads[*w], dw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[*b], g.col_sums());
                    }
                }
                Op::Tanh(x) => {
                    let mut dx = g;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::HCat(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[*a], da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[*b], db);
                    }
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).rows();
                        if self.needs(p) {
                            accumulate(&mut grads[p], g.row_block(start, n));
                        }
                        start += n;
                    }
                }
                Op::Rows { x, start } => {
                    let parent = self.value(*x);
                    let slot = grads[*x].get_or_insert_with(|| Matrix::zeros(parent.rows(), parent.cols()));
                    let cols = parent.cols();
                    let dst = &mut slot.data_mut()[start * cols..(start + g.rows()) * cols];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MseConst { x, target } => {
                    let v = self.value(*x);
                    let c = 2.0 * g.data()[0] / v.data().len().max(1) as f64;
                    let mut dx = v.clone();
                    for (d, t) in dx.data_mut().iter_mut().zip(target.data()) {
                        *d = c * (*d - t);
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::WeightedSum(terms) => {
                    for &(t, c) in terms {
                        if self.needs(t) {
                            accumulate(&mut grads[t], Matrix::from_vec(1, 1, vec![c * g.data()[0]]));
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
