use std::borrow::Cow;

use super::Tensor;
use crate::error::{Error, Result};

/// Offset inside `log_eps`, keeping the KL loss finite at zero estimates.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Pow(Var, f64),
    LogEps(Var),
    SumAll(Var),
    Scale(Var, f64),
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in evaluation order, so the record is acyclic and the
/// reverse of insertion order is a valid backward schedule.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes[v.0]],
        }
    }

    pub fn take(&mut self, v: Var) -> Vec<f64> {
        self.grads[v.0].take().unwrap_or_else(|| vec![0.0; self.sizes[v.0]])
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

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [f64]>, rows: usize, cols: usize, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, name: &'static str) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::MatMul(a, b)
            | Op::ConcatCols(a, b) => self.rg(*a) || self.rg(*b),
            Op::StackRows(vs) => vs.iter().any(|v| self.rg(*v)),
            Op::SliceRows(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Pow(a, _)
            | Op::LogEps(a)
            | Op::SumAll(a)
            | Op::Scale(a, _) => self.rg(*a),
        };
        Ok(self.push(Cow::Owned(value), rows, cols, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf borrowing the tensor's storage.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t.data()), t.rows(), t.cols(), Op::Leaf, true)
    }

    /// Constant leaf borrowing external storage (rows×cols).
    pub fn constant_ref(&mut self, data: &'a [f64], rows: usize, cols: usize) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(self.push(Cow::Borrowed(data), rows, cols, Op::Leaf, false))
    }

    /// Constant leaf owning its data (rows×cols).
    pub fn constant(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for {rows}x{cols}", data.len())));
        }
        self.push_checked(data, rows, cols, Op::Leaf, "constant")
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("graph values are finite")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push_checked(out, r, c, op, name)
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push_checked(out, r, c, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Hadamard(a, b), "hadamard", |x, y| x * y)
    }

    /// Adds the 1×C row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(Error::ShapeMismatch(format!(
                "add_row: {:?} onto {r}x{c}",
                self.shape(bias)
            )));
        }
        let bv = self.value(bias);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        self.push_checked(out, r, c, Op::AddRow(a, bias), "add_row")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul: {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for (arow, orow) in av.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
            for (&x, brow) in arow.iter().zip(bv.chunks_exact(n)) {
                if x == 0.0 {
                    continue;
                }
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        self.push_checked(out, m, n, Op::MatMul(a, b), "matmul")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::ShapeMismatch(format!("concat_cols: {ra} vs {rb} rows")));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for (x, y) in self.value(a).chunks_exact(ca).zip(self.value(b).chunks_exact(cb)) {
            out.extend_from_slice(x);
            out.extend_from_slice(y);
        }
        self.push_checked(out, ra, ca + cb, Op::ConcatCols(a, b), "concat_cols")
    }

    /// Stacks equally wide matrices vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::ShapeMismatch("stack_rows of nothing".into()));
        };
        let c = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(Error::ShapeMismatch(format!("stack_rows: width {pc} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        self.push_checked(out, rows, c, Op::StackRows(parts.to_vec()), "stack_rows")
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return Err(Error::ShapeMismatch(format!("slice_rows {start}..{end} of {r} rows")));
        }
        let out = self.value(a)[start * c..end * c].to_vec();
        self.push_checked(out, end - start, c, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn abs_val(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), "abs_val", f64::abs)
    }

    /// Element-wise `a^alpha`. Non-integer exponents need a non-negative base;
    /// a zero base yields zero.
    pub fn pow_scalar(&mut self, a: Var, alpha: f64) -> Result<Var> {
        if alpha.fract() != 0.0 && self.value(a).iter().any(|&x| x < 0.0) {
            return Err(Error::NegativeEntry("pow_scalar base"));
        }
        self.map(a, Op::Pow(a, alpha), "pow_scalar", |x| {
            if x == 0.0 {
                0.0
            } else {
                x.powf(alpha)
            }
        })
    }

    /// Element-wise `ln(a + LOG_EPS)`.
    pub fn log_eps(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::LogEps(a), "log_eps", |x| (x + LOG_EPS).ln())
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push_checked(vec![s], 1, 1, Op::SumAll(a), "sum_all")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, k), "scale", |x| k * x)
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads, sizes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                let c = node.cols;
                if let Some(s) = self.slot(grads, *bias) {
                    for row in g.chunks_exact(c) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(bv) {
                        *s += g * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(av) {
                        *s += g * x;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (_, k) = self.shape(*a);
                let n = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    for (srow, grow) in s.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                        for (sp, brow) in srow.iter_mut().zip(bv.chunks_exact(n)) {
                            *sp += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    // dB = Aᵀ · dC
                    for (arow, grow) in av.chunks_exact(k).zip(g.chunks_exact(n)) {
                        for (&x, srow) in arow.iter().zip(s.chunks_exact_mut(n)) {
                            if x == 0.0 {
                                continue;
                            }
                            srow.iter_mut().zip(grow).for_each(|(s, g)| *s += x * g);
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                if let Some(s) = self.slot(grads, *a) {
                    for (srow, grow) in s.chunks_exact_mut(ca).zip(g.chunks_exact(ca + cb)) {
                        srow.iter_mut().zip(&grow[..ca]).for_each(|(s, g)| *s += g);
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (srow, grow) in s.chunks_exact_mut(cb).zip(g.chunks_exact(ca + cb)) {
                        srow.iter_mut().zip(&grow[ca..]).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(s) = self.slot(grads, p) {
                        s.iter_mut().zip(&g[offset..offset + len]).for_each(|(s, g)| *s += g);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let off = start * node.cols;
                if let Some(s) = self.slot(grads, *a) {
                    s[off..off + g.len()].iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
            Op::Sigmoid(a) => self.unary(grads, *a, g, y, |_, y| y * (1.0 - y)),
            Op::Tanh(a) => self.unary(grads, *a, g, y, |_, y| 1.0 - y * y),
            Op::Relu(a) => self.unary(grads, *a, g, y, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Abs(a) => self.unary(grads, *a, g, y, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Pow(a, alpha) => {
                let alpha = *alpha;
                self.unary(grads, *a, g, y, |x, _| {
                    if x == 0.0 {
                        if alpha == 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        alpha * x.powf(alpha - 1.0)
                    }
                })
            }
            Op::LogEps(a) => self.unary(grads, *a, g, y, |x, _| 1.0 / (x + LOG_EPS)),
            Op::SumAll(a) => {
                let g0 = g[0];
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|s| *s += g0);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g);
                }
            }
        }
    }

    /// Accumulates `g * d(x, y)` into the parent, where `y` is this node's output.
    fn unary(&self, grads: &mut [Option<Vec<f64>>], a: Var, g: &[f64], y: &[f64], d: impl Fn(f64, f64) -> f64) {
        let x = self.value(a);
        if let Some(s) = self.slot(grads, a) {
            for (((s, g), &x), &y) in s.iter_mut().zip(g).zip(x).zip(y) {
                *s += g * d(x, y);
            }
        }
    }
}
