//! Tape-based reverse-mode differentiation over matrices.
//!
//! A [`Graph`] records operations eagerly: every node's value is computed
//! when it is created. [`Graph::backward`] then walks the tape in reverse and
//! accumulates gradients for every parameter that took part.
//!
//! Only the operations needed by the policy networks and the training loss
//! are provided.

use thiserror::Error;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("non-finite value produced at node {node} ({op})")]
    NonFiniteValue { node: usize, op: &'static str },
    #[error("non-finite gradient produced at node {node} ({op})")]
    NonFiniteGradient { node: usize, op: &'static str },
    #[error("backward() requires a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// `x * w^T`
    Linear(Var, Var),
    AddBias(Var, Var),
    Elu(Var),
    /// Row-wise `g * v / |v|`; `g` is `1 x rows(v)`.
    WeightNorm(Var, Var),
    Exp(Var),
    DivScalar(Var, Var),
    SoftmaxRows(Var),
    Mul(Var, Var),
    AddScaled(Var, Var, f64, f64),
    Scale(Var, f64),
    /// Sums consecutive blocks of `group` rows.
    SegmentSum(Var, usize),
    /// Repeats every row `group` times.
    RepeatRows(Var, usize),
    /// Copies row blocks of size `block` in the order of the index list.
    Gather(Var, Vec<usize>, usize),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Reshape(Var),
    Clamp(Var, f64, f64),
    GaussianLogProb {
        mu: Var,
        log_std: Var,
        actions: Tensor,
    },
    SumAll(Var),
    ClippedSurrogateSum {
        logp: Var,
        old_logp: Tensor,
        advantages: Tensor,
        epsilon: f64,
    },
    SquaredErrorSum {
        pred: Var,
        target: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Linear(..) => "linear",
            Op::AddBias(..) => "add_bias",
            Op::Elu(_) => "elu",
            Op::WeightNorm(..) => "weight_norm",
            Op::Exp(_) => "exp",
            Op::DivScalar(..) => "div_scalar",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Mul(..) => "mul",
            Op::AddScaled(..) => "add_scaled",
            Op::Scale(..) => "scale",
            Op::SegmentSum(..) => "segment_sum",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Gather(..) => "gather",
            Op::RowDot(..) => "row_dot",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::Clamp(..) => "clamp",
            Op::GaussianLogProb { .. } => "gaussian_log_prob",
            Op::SumAll(_) => "sum_all",
            Op::ClippedSurrogateSum { .. } => "clipped_surrogate",
            Op::SquaredErrorSum { .. } => "squared_error",
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters, which are read from the store.
    value: Option<Tensor>,
}

/// Gradients for every parameter of a store; `None` where unused.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            tensors: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.tensors[id.index()].as_ref()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.iter_mut().flatten() {
            t.scale_assign(c);
        }
    }
}

pub const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let y = matmul_nt(self.value(x), self.value(w));
        self.push(Op::Linear(x, w), y)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1);
        let mut y = self.value(x).clone();
        assert_eq!(y.cols(), bias.cols(), "bias width");
        let bias = bias.data().to_vec();
        for r in 0..y.rows() {
            for (a, b) in y.row_mut(r).iter_mut().zip(&bias) {
                *a += b;
            }
        }
        self.push(Op::AddBias(x, b), y)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(elu);
        self.push(Op::Elu(x), y)
    }

    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let (vt, gt) = (self.value(v), self.value(g));
        assert_eq!(gt.shape(), (1, vt.rows()), "weight norm gain shape");
        let mut w = vt.clone();
        for r in 0..w.rows() {
            let norm = vt.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = gt.get(0, r) / norm;
            for x in w.row_mut(r) {
                *x *= c;
            }
        }
        self.push(Op::WeightNorm(v, g), w)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), y)
    }

    /// Divides every element by the 1x1 tensor `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        let d = self.value(s).item();
        let y = self.value(x).map(|v| v / d);
        self.push(Op::DivScalar(x, s), y)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(Op::SoftmaxRows(x), y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape(), bt.shape(), "mul shapes");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::from_vec(at.rows(), at.cols(), data);
        self.push(Op::Mul(a, b), y)
    }

    /// `ca * a + cb * b`.
    pub fn add_scaled(&mut self, a: Var, b: Var, ca: f64, cb: f64) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape(), bt.shape(), "add shapes");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| ca * x + cb * y).collect();
        let y = Tensor::from_vec(at.rows(), at.cols(), data);
        self.push(Op::AddScaled(a, b, ca, cb), y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.add_scaled(a, b, 1.0, 1.0)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), y)
    }

    /// Sums consecutive blocks of `group` rows, in row order.
    pub fn segment_sum(&mut self, x: Var, group: usize) -> Var {
        let xt = self.value(x);
        assert!(group > 0 && xt.rows() % group == 0, "segment_sum group");
        let n = xt.rows() / group;
        let mut y = Tensor::zeros(n, xt.cols());
        for r in 0..xt.rows() {
            let src = xt.row(r);
            for (a, b) in y.row_mut(r / group).iter_mut().zip(src) {
                *a += b;
            }
        }
        self.push(Op::SegmentSum(x, group), y)
    }

    pub fn repeat_rows(&mut self, x: Var, group: usize) -> Var {
        let xt = self.value(x);
        let mut y = Tensor::zeros(xt.rows() * group, xt.cols());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(xt.row(r / group));
        }
        self.push(Op::RepeatRows(x, group), y)
    }

    /// Row block `index[i]` of `x` becomes row block `i` of the output.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, block: usize) -> Var {
        let xt = self.value(x);
        let cols = xt.cols();
        let mut data = Vec::with_capacity(index.len() * block * cols);
        for &i in &index {
            data.extend_from_slice(&xt.data()[i * block * cols..(i + 1) * block * cols]);
        }
        let y = Tensor::from_vec(index.len() * block, cols, data);
        self.push(Op::Gather(x, index, block), y)
    }

    /// Row-wise dot product, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape(), bt.shape(), "row_dot shapes");
        let data = (0..at.rows())
            .map(|r| at.row(r).iter().zip(bt.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let y = Tensor::from_vec(at.rows(), 1, data);
        self.push(Op::RowDot(a, b), y)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.rows(), bt.rows(), "concat rows");
        let mut data = Vec::with_capacity(at.len() + bt.len());
        for r in 0..at.rows() {
            data.extend_from_slice(at.row(r));
            data.extend_from_slice(bt.row(r));
        }
        let y = Tensor::from_vec(at.rows(), at.cols() + bt.cols(), data);
        self.push(Op::ConcatCols(a, b), y)
    }

    /// Leading `len` columns.
    pub fn slice_cols(&mut self, x: Var, len: usize) -> Var {
        let xt = self.value(x);
        assert!(len <= xt.cols());
        let mut data = Vec::with_capacity(xt.rows() * len);
        for r in 0..xt.rows() {
            data.extend_from_slice(&xt.row(r)[..len]);
        }
        let y = Tensor::from_vec(xt.rows(), len, data);
        self.push(Op::SliceCols(x, len), y)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let data = self.value(x).data().to_vec();
        let y = Tensor::from_vec(rows, cols, data);
        self.push(Op::Reshape(x), y)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(x, lo, hi), y)
    }

    /// Elementwise log-density of `actions` under `N(mu, exp(log_std)^2)`.
    pub fn gaussian_log_prob(&mut self, mu: Var, log_std: Var, actions: Tensor) -> Var {
        let (m, s) = (self.value(mu), self.value(log_std));
        assert_eq!(m.shape(), s.shape());
        assert_eq!(m.shape(), actions.shape());
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .zip(actions.data())
            .map(|((&m, &ls), &a)| {
                let z = (a - m) * (-ls).exp();
                -0.5 * z * z - ls - LOG_SQRT_2PI
            })
            .collect();
        let y = Tensor::from_vec(m.rows(), m.cols(), data);
        self.push(Op::GaussianLogProb { mu, log_std, actions }, y)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Sum over samples of `-min(r * A, clip(r, 1 - eps, 1 + eps) * A)` with
    /// `r = exp(logp - old_logp)`.
    pub fn clipped_surrogate_sum(&mut self, logp: Var, old_logp: Tensor, advantages: Tensor, epsilon: f64) -> Var {
        let lp = self.value(logp);
        assert_eq!(lp.shape(), old_logp.shape());
        assert_eq!(lp.shape(), advantages.shape());
        let total = lp
            .data()
            .iter()
            .zip(old_logp.data())
            .zip(advantages.data())
            .map(|((&l, &o), &a)| {
                let r = (l - o).exp();
                -(r * a).min(r.clamp(1.0 - epsilon, 1.0 + epsilon) * a)
            })
            .sum();
        self.push(
            Op::ClippedSurrogateSum {
                logp,
                old_logp,
                advantages,
                epsilon,
            },
            Tensor::scalar(total),
        )
    }

    pub fn squared_error_sum(&mut self, pred: Var, target: Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape());
        let total = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(Op::SquaredErrorSum { pred, target }, Tensor::scalar(total))
    }

    /// First node whose value is NaN or infinite.
    pub fn check_finite(&self) -> Result<(), GraphError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(v) = &n.value {
                if !v.is_finite() {
                    return Err(GraphError::NonFiniteValue { node: i, op: n.op.name() });
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(GraphError::NonScalarLoss(shape.0, shape.1));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !dy.is_finite() {
                return Err(GraphError::NonFiniteGradient { node: i, op: node.op.name() });
            }
            self.propagate(&node.op, i, dy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, i: usize, dy: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &'a mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
        }
        fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&t),
                empty => *empty = Some(t),
            }
        }
        let y = self.nodes[i].value.as_ref();

        match op {
            Op::Input => {}
            Op::Param(id) => match &mut out.tensors[id.index()] {
                Some(g) => g.add_assign(&dy),
                empty => *empty = Some(dy),
            },
            Op::Linear(x, w) => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                matmul_nn_acc(&dy, wt, slot(grads, *x, xt.rows(), xt.cols()));
                matmul_tn_acc(&dy, xt, slot(grads, *w, wt.rows(), wt.cols()));
            }
            Op::AddBias(x, b) => {
                let mut db = Tensor::zeros(1, dy.cols());
                for r in 0..dy.rows() {
                    for (a, v) in db.data_mut().iter_mut().zip(dy.row(r)) {
                        *a += v;
                    }
                }
                acc(grads, *b, db);
                acc(grads, *x, dy);
            }
            Op::Elu(x) => {
                let (xt, yt) = (self.value(*x), y.expect("elu value"));
                let mut dx = dy;
                for ((d, &xv), &yv) in dx.data_mut().iter_mut().zip(xt.data()).zip(yt.data()) {
                    if xv <= 0.0 {
                        *d *= yv + 1.0;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::WeightNorm(v, g) => {
                let (vt, gt) = (self.value(*v), self.value(*g));
                let mut dv = Tensor::zeros(vt.rows(), vt.cols());
                let mut dg = Tensor::zeros(1, vt.rows());
                for r in 0..vt.rows() {
                    let vr = vt.row(r);
                    let dr = dy.row(r);
                    let norm = vr.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let proj = vr.iter().zip(dr).map(|(a, b)| a * b).sum::<f64>() / norm;
                    dg.data_mut()[r] = proj;
                    let c = gt.get(0, r) / norm;
                    for ((o, &d), &x) in dv.row_mut(r).iter_mut().zip(dr).zip(vr) {
                        *o = c * (d - proj * x / norm);
                    }
                }
                acc(grads, *v, dv);
                acc(grads, *g, dg);
            }
            Op::Exp(x) => {
                let yt = y.expect("exp value");
                let mut dx = dy;
                for (d, &yv) in dx.data_mut().iter_mut().zip(yt.data()) {
                    *d *= yv;
                }
                acc(grads, *x, dx);
            }
            Op::DivScalar(x, s) => {
                let (xt, st) = (self.value(*x), self.value(*s).item());
                let ds = -dy.data().iter().zip(xt.data()).map(|(d, x)| d * x).sum::<f64>() / (st * st);
                let dx = dy.map(|d| d / st);
                acc(grads, *x, dx);
                acc(grads, *s, Tensor::scalar(ds));
            }
            Op::SoftmaxRows(x) => {
                let yt = y.expect("softmax value");
                let mut dx = dy;
                for r in 0..yt.rows() {
                    let yr = yt.row(r);
                    let inner: f64 = dx.row(r).iter().zip(yr).map(|(d, y)| d * y).sum();
                    for (d, &yv) in dx.row_mut(r).iter_mut().zip(yr) {
                        *d = yv * (*d - inner);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let da = Tensor::from_vec(dy.rows(), dy.cols(), dy.data().iter().zip(bt.data()).map(|(d, v)| d * v).collect());
                let db = Tensor::from_vec(dy.rows(), dy.cols(), dy.data().iter().zip(at.data()).map(|(d, v)| d * v).collect());
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddScaled(a, b, ca, cb) => {
                acc(grads, *a, dy.map(|d| d * ca));
                acc(grads, *b, dy.map(|d| d * cb));
            }
            Op::Scale(x, c) => acc(grads, *x, dy.map(|d| d * c)),
            Op::SegmentSum(x, group) => {
                let xt = self.value(*x);
                let mut dx = Tensor::zeros(xt.rows(), xt.cols());
                for r in 0..xt.rows() {
                    dx.row_mut(r).copy_from_slice(dy.row(r / group));
                }
                acc(grads, *x, dx);
            }
            Op::RepeatRows(x, group) => {
                let xt = self.value(*x);
                let dx = slot(grads, *x, xt.rows(), xt.cols());
                for r in 0..dy.rows() {
                    for (a, v) in dx.row_mut(r / group).iter_mut().zip(dy.row(r)) {
                        *a += v;
                    }
                }
            }
            Op::Gather(x, index, block) => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let dx = slot(grads, *x, xt.rows(), xt.cols());
                let span = block * cols;
                for (k, &src) in index.iter().enumerate() {
                    let from = &dy.data()[k * span..(k + 1) * span];
                    for (a, v) in dx.data_mut()[src * span..(src + 1) * span].iter_mut().zip(from) {
                        *a += v;
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(at.rows(), at.cols());
                let mut db = Tensor::zeros(bt.rows(), bt.cols());
                for r in 0..at.rows() {
                    let d = dy.get(r, 0);
                    for (o, v) in da.row_mut(r).iter_mut().zip(bt.row(r)) {
                        *o = d * v;
                    }
                    for (o, v) in db.row_mut(r).iter_mut().zip(at.row(r)) {
                        *o = d * v;
                    }
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut da = Tensor::zeros(dy.rows(), ca);
                let mut db = Tensor::zeros(dy.rows(), cb);
                for r in 0..dy.rows() {
                    da.row_mut(r).copy_from_slice(&dy.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&dy.row(r)[ca..]);
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::SliceCols(x, len) => {
                let xt = self.value(*x);
                let dx = slot(grads, *x, xt.rows(), xt.cols());
                for r in 0..dy.rows() {
                    for (a, v) in dx.row_mut(r)[..*len].iter_mut().zip(dy.row(r)) {
                        *a += v;
                    }
                }
            }
            Op::Reshape(x) => {
                let xt = self.value(*x);
                acc(grads, *x, Tensor::from_vec(xt.rows(), xt.cols(), dy.into_vec()));
            }
            Op::Clamp(x, lo, hi) => {
                let xt = self.value(*x);
                let mut dx = dy;
                for (d, &v) in dx.data_mut().iter_mut().zip(xt.data()) {
                    if v < *lo || v > *hi {
                        *d = 0.0;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::GaussianLogProb { mu, log_std, actions } => {
                let (m, s) = (self.value(*mu), self.value(*log_std));
                let n = m.len();
                let mut dm = Vec::with_capacity(n);
                let mut ds = Vec::with_capacity(n);
                for k in 0..n {
                    let inv = (-s.data()[k]).exp();
                    let z = (actions.data()[k] - m.data()[k]) * inv;
                    let d = dy.data()[k];
                    dm.push(d * z * inv);
                    ds.push(d * (z * z - 1.0));
                }
                acc(grads, *mu, Tensor::from_vec(m.rows(), m.cols(), dm));
                acc(grads, *log_std, Tensor::from_vec(s.rows(), s.cols(), ds));
            }
            Op::SumAll(x) => {
                let xt = self.value(*x);
                acc(grads, *x, Tensor::filled(xt.rows(), xt.cols(), dy.item()));
            }
            Op::ClippedSurrogateSum {
                logp,
                old_logp,
                advantages,
                epsilon,
            } => {
                let lp = self.value(*logp);
                let d = dy.item();
                let data = lp
                    .data()
                    .iter()
                    .zip(old_logp.data())
                    .zip(advantages.data())
                    .map(|((&l, &o), &a)| {
                        let r = (l - o).exp();
                        let unclipped = r * a;
                        let clipped = r.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
                        if unclipped <= clipped {
                            -d * a * r
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(grads, *logp, Tensor::from_vec(lp.rows(), lp.cols(), data));
            }
            Op::SquaredErrorSum { pred, target } => {
                let p = self.value(*pred);
                let d = dy.item();
                let data = p.data().iter().zip(target.data()).map(|(a, b)| 2.0 * d * (a - b)).collect();
                acc(grads, *pred, Tensor::from_vec(p.rows(), p.cols(), data));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::ParamStore;

    fn fd_check(store: &mut ParamStore, loss: impl Fn(&ParamStore) -> f64, grads: &Gradients) {
        let h = 1e-6;
        for id in store.ids() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + h;
                let up = loss(store);
                store.get_mut(id).data_mut()[k] = orig - h;
                let down = loss(store);
                store.get_mut(id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(err < 1e-5, "{} [{k}]: analytic {analytic} numeric {numeric}", store.name(id));
            }
        }
    }

    #[test]
    fn weight_norm_row_example() {
        let mut store = ParamStore::new();
        let v = store.add("v", Tensor::from_vec(1, 2, vec![3.0, 4.0]));
        let g = store.add("g", Tensor::scalar(2.0));
        let mut graph = Graph::new(&store);
        let (vv, gv) = (graph.param(v), graph.param(g));
        let w = graph.weight_norm(vv, gv);
        let got = graph.value(w).data();
        assert!((got[0] - 1.2).abs() < 1e-15 && (got[1] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn weight_norm_gain_gradient_identity() {
        // dL/dg = (dL/dw) . v / |v|
        let mut store = ParamStore::new();
        let v = store.add("v", Tensor::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.5, 0.5, -0.2]));
        let g = store.add("g", Tensor::from_vec(1, 2, vec![1.5, 0.7]));
        let x = Tensor::from_vec(1, 3, vec![0.2, -0.4, 1.1]);
        let loss = |s: &ParamStore| {
            let mut graph = Graph::new(s);
            let xi = graph.input(x.clone());
            let (vv, gv) = (graph.param(v), graph.param(g));
            let w = graph.weight_norm(vv, gv);
            let y = graph.linear(xi, w);
            let y = graph.elu(y);
            let l = graph.sum_all(y);
            (graph.value(l).item(), graph.backward(l).unwrap())
        };
        let (_, grads) = loss(&store);
        let vt = store.get(v);
        // dL/dw = dL/dy_r * x for row r.
        let mut graph = Graph::new(&store);
        let xi = graph.input(x.clone());
        let (vv, gv) = (graph.param(v), graph.param(g));
        let w = graph.weight_norm(vv, gv);
        let y = graph.linear(xi, w);
        let yv = graph.value(y).clone();
        for r in 0..2 {
            let dy = if yv.get(0, r) > 0.0 { 1.0 } else { yv.get(0, r).exp() };
            let norm = vt.row(r).iter().map(|a| a * a).sum::<f64>().sqrt();
            let expected: f64 = vt.row(r).iter().zip(x.data()).map(|(a, b)| dy * b * a / norm).sum();
            assert!((grads.get(g).unwrap().get(0, r) - expected).abs() < 1e-14);
        }
        fd_check(&mut store, |s| loss(s).0, &grads);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(3, 2, vec![0.4, -0.3, 0.8, 0.1, -0.5, 0.9]));
        let b = store.add("b", Tensor::from_vec(1, 3, vec![0.1, -0.2, 0.05]));
        let t = store.add("log_tau", Tensor::scalar(0.3));
        let o = store.add("o", Tensor::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()));
        let ls = store.add("ls", Tensor::from_vec(1, 3, vec![-0.5, 0.2, 0.1]));
        let x = Tensor::from_vec(4, 2, vec![0.5, -1.0, 0.3, 0.7, -0.2, 0.4, 1.2, -0.6]);
        let actions = Tensor::from_vec(6, 1, vec![0.3, -0.2, 0.5, 0.1, 0.0, -0.4]);
        let old = Tensor::from_vec(2, 1, vec![-2.0, -3.5]);
        let adv = Tensor::from_vec(2, 1, vec![1.0, -0.7]);
        let loss = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let xi = g.input(x.clone());
            let (wv, bv, tv, ov, lsv) = (g.param(w), g.param(b), g.param(t), g.param(o), g.param(ls));
            let h = g.linear(xi, wv);
            let h = g.add_bias(h, bv);
            let h = g.elu(h);
            let tau = g.exp(tv);
            let h = g.div_scalar(h, tau);
            let a = g.softmax_rows(h);
            let z = g.mul(a, ov);
            let zs = g.segment_sum(z, 2);
            let rep = g.repeat_rows(zs, 2);
            let gathered = g.gather(a, vec![1, 0, 1], 1);
            let gathered = g.slice_cols(gathered, 3);
            let cat = g.concat_cols(rep, a);
            let mu = g.row_dot(rep, a);
            let mu = g.reshape(mu, 2, 2);
            let mu = g.slice_cols(mu, 2);
            let mu = g.reshape(mu, 4, 1);
            let lsr = g.repeat_rows(lsv, 2);
            let lsr = g.reshape(lsr, 6, 1);
            let lsr = g.clamp(lsr, -0.4, 1.0);
            let mu6 = g.gather(mu, vec![0, 1, 2, 3, 0, 1], 1);
            let lp = g.gaussian_log_prob(mu6, lsr, actions.clone());
            let lp = g.segment_sum(lp, 3);
            let surr = g.clipped_surrogate_sum(lp, old.clone(), adv.clone(), 0.2);
            let sq = g.squared_error_sum(zs, Tensor::filled(2, 3, 0.1));
            let s1 = g.sum_all(cat);
            let s2 = g.sum_all(gathered);
            let total = g.add_scaled(surr, sq, 1.0, 0.5);
            let total = g.add(total, s1);
            let total = g.add_scaled(total, s2, 1.0, 0.3);
            let total = g.scale(total, 0.7);
            (g.value(total).item(), g.backward(total).unwrap())
        };
        let (_, grads) = loss(&store);
        fd_check(&mut store, |s| loss(s).0, &grads);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1000.0));
        let mut g = Graph::new(&store);
        let v = g.param(p);
        let e = g.exp(v);
        let e = g.exp(e);
        let l = g.sum_all(e);
        assert!(matches!(g.check_finite(), Err(GraphError::NonFiniteValue { op: "exp", .. })));
        assert!(matches!(g.backward(l), Err(GraphError::NonFiniteGradient { .. })));
    }
}
