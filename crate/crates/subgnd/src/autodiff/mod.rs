//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Dense f64 tensors only, no broadcasting beyond the row-wise bias in
//! [`Tape::linear`]. The op set is exactly what the classifier needs; each
//! op records enough during the forward pass (dropout masks, pool argmaxes,
//! softmax outputs) to make backward deterministic. ReLU's subgradient at 0
//! is 0 and max reductions break ties toward the lowest index / first
//! argument, so backward is a pure function of the forward inputs.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_FD_EPS};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("segment target {target} out of range for {segments} segments")]
    TargetOutOfRange { target: usize, segments: usize },
    #[error("softmax input must be finite")]
    NonFiniteInput,
    #[error("backward needs a scalar loss")]
    NonScalarLoss,
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("dropout probability must lie in [0, 1)")]
    BadDropout,
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(k) => k,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (rows, cols) view; scalars and vectors count as one row.
    fn dims(&self) -> (usize, usize) {
        match *self {
            Shape::Scalar => (1, 1),
            Shape::Vector(k) => (1, k),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
    Sum,
}

impl std::str::FromStr for PoolMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(PoolMode::Max),
            "mean" => Ok(PoolMode::Mean),
            "sum" => Ok(PoolMode::Sum),
            other => Err(format!("unknown pool mode {other:?} (expected max|mean|sum)")),
        }
    }
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolMode::Max => "max",
            PoolMode::Mean => "mean",
            PoolMode::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: TensorId, w: TensorId, b: TensorId },
    Relu { x: TensorId },
    Dropout { x: TensorId, mask: Vec<f64> },
    SelectRows { x: TensorId, idx: Vec<usize> },
    SegmentSum { x: TensorId, targets: Vec<usize> },
    Row { x: TensorId, i: usize },
    Pool { x: TensorId, mode: PoolMode, argmax: Vec<usize> },
    Concat { a: TensorId, b: TensorId },
    Maximum { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    Sum { x: TensorId },
    Softmax { v: TensorId },
    CrossEntropy { logits: TensorId, probs: Vec<f64>, label: usize },
    ZeroPad { x: TensorId, ego: usize },
    AdaptiveScale { h: TensorId, logits: TensorId, alpha: [f64; 4] },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    shape: Shape,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation graph. Nodes are appended in execution order, so
/// every node's inputs precede it and one reverse sweep settles all grads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Numerically stable softmax into a fresh vector.
pub fn softmax_values(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
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

    fn push(&mut self, shape: Shape, value: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(value.len(), shape.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, shape, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf that participates in backward (weights, biases, logits).
    pub fn param(&mut self, shape: Shape, data: Vec<f64>) -> TensorId {
        self.push(shape, data, true, Op::Leaf)
    }

    /// Leaf excluded from backward (features, constants).
    pub fn input(&mut self, shape: Shape, data: Vec<f64>) -> TensorId {
        self.push(shape, data, false, Op::Leaf)
    }

    pub fn value(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: TensorId) -> Shape {
        self.nodes[t.0].shape
    }

    /// Gradient buffer; all zeros until [`Tape::backward`] has run.
    pub fn grad(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].grad
    }

    fn requires(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn any_requires(&self, ts: &[TensorId]) -> bool {
        ts.iter().any(|t| self.requires(*t))
    }

    fn matrix_dims(&self, t: TensorId, what: &str) -> Result<(usize, usize)> {
        match self.shape(t) {
            Shape::Matrix(r, c) => Ok((r, c)),
            other => {
                Err(AutodiffError::ShapeMismatch(format!("{what}: expected matrix, got {other:?}")))
            }
        }
    }

    fn vector_len(&self, t: TensorId, what: &str) -> Result<usize> {
        match self.shape(t) {
            Shape::Vector(k) => Ok(k),
            other => {
                Err(AutodiffError::ShapeMismatch(format!("{what}: expected vector, got {other:?}")))
            }
        }
    }

    /// xW + b, bias broadcast per row. x may be a vector (treated as one row)
    /// or a matrix; the output mirrors x's kind.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, a) = match self.shape(x) {
            Shape::Vector(k) => (1, k),
            Shape::Matrix(r, c) => (r, c),
            Shape::Scalar => {
                return Err(AutodiffError::ShapeMismatch(
                    "linear: x must be vector or matrix".into(),
                ))
            }
        };
        let (wa, wb) = self.matrix_dims(w, "linear: W")?;
        let bl = self.vector_len(b, "linear: b")?;
        if wa != a || bl != wb {
            return Err(AutodiffError::ShapeMismatch(format!(
                "linear: x is {n}x{a}, W is {wa}x{wb}, b has {bl}"
            )));
        }
        let mut out = vec![0.0; n * wb];
        for i in 0..n {
            let row = &mut out[i * wb..(i + 1) * wb];
            row.copy_from_slice(&self.nodes[b.0].value);
            for k in 0..a {
                let xv = self.nodes[x.0].value[i * a + k];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &self.nodes[w.0].value[k * wb..(k + 1) * wb];
                for (o, wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let shape = match self.shape(x) {
            Shape::Vector(_) => Shape::Vector(wb),
            _ => Shape::Matrix(n, wb),
        };
        let req = self.any_requires(&[x, w, b]);
        Ok(self.push(shape, out, req, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        let (shape, req) = (self.shape(x), self.requires(x));
        self.push(shape, value, req, Op::Relu { x })
    }

    /// Training-mode inverted dropout: each element is zeroed with
    /// probability `p`, survivors are scaled by 1/(1-p). Callers skip this
    /// op entirely in eval mode.
    pub fn dropout(&mut self, x: TensorId, p: f64, rng: &mut ChaCha8Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::BadDropout);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.nodes[x.0].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let (shape, req) = (self.shape(x), self.requires(x));
        Ok(self.push(shape, value, req, Op::Dropout { x, mask }))
    }

    /// Gathers rows of a matrix; `idx` may repeat rows or be empty.
    pub fn select_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId> {
        let (n, h) = self.matrix_dims(x, "select_rows")?;
        let mut value = Vec::with_capacity(idx.len() * h);
        for &r in idx {
            if r >= n {
                return Err(AutodiffError::IndexOutOfRange { index: r, len: n });
            }
            value.extend_from_slice(&self.nodes[x.0].value[r * h..(r + 1) * h]);
        }
        let req = self.requires(x);
        Ok(self.push(
            Shape::Matrix(idx.len(), h),
            value,
            req,
            Op::SelectRows { x, idx: idx.to_vec() },
        ))
    }

    /// Row t of the output is the sum of input rows whose target is t;
    /// segments nothing maps to stay zero.
    pub fn segment_sum(
        &mut self,
        x: TensorId,
        targets: &[usize],
        segments: usize,
    ) -> Result<TensorId> {
        let (m, h) = self.matrix_dims(x, "segment_sum")?;
        if targets.len() != m {
            return Err(AutodiffError::ShapeMismatch(format!(
                "segment_sum: {m} rows but {} targets",
                targets.len()
            )));
        }
        let mut value = vec![0.0; segments * h];
        for (i, &t) in targets.iter().enumerate() {
            if t >= segments {
                return Err(AutodiffError::TargetOutOfRange { target: t, segments });
            }
            let src = &self.nodes[x.0].value[i * h..(i + 1) * h];
            let dst = &mut value[t * h..(t + 1) * h];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let req = self.requires(x);
        Ok(self.push(
            Shape::Matrix(segments, h),
            value,
            req,
            Op::SegmentSum { x, targets: targets.to_vec() },
        ))
    }

    pub fn row(&mut self, x: TensorId, i: usize) -> Result<TensorId> {
        let (n, h) = self.matrix_dims(x, "row")?;
        if i >= n {
            return Err(AutodiffError::IndexOutOfRange { index: i, len: n });
        }
        let value = self.nodes[x.0].value[i * h..(i + 1) * h].to_vec();
        let req = self.requires(x);
        Ok(self.push(Shape::Vector(h), value, req, Op::Row { x, i }))
    }

    /// Columnwise reduction of a k×h matrix down to an h-vector. An empty
    /// matrix (k = 0) pools to zeros in every mode. Max routes gradient to
    /// the first row attaining each column's max.
    pub fn pool(&mut self, x: TensorId, mode: PoolMode) -> Result<TensorId> {
        let (k, h) = self.matrix_dims(x, "pool")?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; h];
        let mut argmax = Vec::new();
        if k > 0 {
            match mode {
                PoolMode::Sum | PoolMode::Mean => {
                    for r in 0..k {
                        for c in 0..h {
                            value[c] += xv[r * h + c];
                        }
                    }
                    if mode == PoolMode::Mean {
                        for v in &mut value {
                            *v /= k as f64;
                        }
                    }
                }
                PoolMode::Max => {
                    argmax = vec![0; h];
                    value.copy_from_slice(&xv[..h]);
                    for r in 1..k {
                        for c in 0..h {
                            if xv[r * h + c] > value[c] {
                                value[c] = xv[r * h + c];
                                argmax[c] = r;
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires(x);
        Ok(self.push(Shape::Vector(h), value, req, Op::Pool { x, mode, argmax }))
    }

    /// Feature-axis concatenation: vector∥vector or row-wise matrix∥matrix.
    pub fn concat(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = match (sa, sb) {
            (Shape::Vector(p), Shape::Vector(q)) => Shape::Vector(p + q),
            (Shape::Matrix(n, p), Shape::Matrix(m, q)) if n == m => Shape::Matrix(n, p + q),
            _ => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "concat: incompatible {sa:?} and {sb:?}"
                )))
            }
        };
        let (rows, pa) = sa.dims();
        let pb = sb.dims().1;
        let mut value = Vec::with_capacity(shape.len());
        for r in 0..rows {
            value.extend_from_slice(&self.nodes[a.0].value[r * pa..(r + 1) * pa]);
            value.extend_from_slice(&self.nodes[b.0].value[r * pb..(r + 1) * pb]);
        }
        let req = self.any_requires(&[a, b]);
        Ok(self.push(shape, value, req, Op::Concat { a, b }))
    }

    /// Elementwise max of two same-shape tensors; ties send gradient to `a`.
    pub fn maximum(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "maximum: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x.max(y))
            .collect();
        let (shape, req) = (self.shape(a), self.any_requires(&[a, b]));
        Ok(self.push(shape, value, req, Op::Maximum { a, b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value =
            self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        let (shape, req) = (self.shape(a), self.any_requires(&[a, b]));
        Ok(self.push(shape, value, req, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value =
            self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x * y).collect();
        let (shape, req) = (self.shape(a), self.any_requires(&[a, b]));
        Ok(self.push(shape, value, req, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let value = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        let (shape, req) = (self.shape(x), self.requires(x));
        self.push(shape, value, req, Op::Scale { x, c })
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        let req = self.requires(x);
        self.push(Shape::Scalar, vec![total], req, Op::Sum { x })
    }

    pub fn softmax(&mut self, v: TensorId) -> Result<TensorId> {
        let k = self.vector_len(v, "softmax")?;
        if k == 0 {
            return Err(AutodiffError::ShapeMismatch("softmax: empty vector".into()));
        }
        if self.nodes[v.0].value.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFiniteInput);
        }
        let value = softmax_values(&self.nodes[v.0].value);
        let req = self.requires(v);
        Ok(self.push(Shape::Vector(k), value, req, Op::Softmax { v }))
    }

    /// −log softmax(logits)[label], in the fused stable form
    /// logsumexp(logits) − logits[label].
    pub fn cross_entropy(&mut self, logits: TensorId, label: usize) -> Result<TensorId> {
        let c = self.vector_len(logits, "cross_entropy")?;
        if label >= c {
            return Err(AutodiffError::LabelOutOfRange { label, classes: c });
        }
        let lv = &self.nodes[logits.0].value;
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFiniteInput);
        }
        let m = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lv.iter().map(|x| (x - m).exp()).sum();
        let loss = m + z.ln() - lv[label];
        let probs: Vec<f64> = lv.iter().map(|x| (x - m).exp() / z).collect();
        let req = self.requires(logits);
        Ok(self.push(Shape::Scalar, vec![loss], req, Op::CrossEntropy { logits, probs, label }))
    }

    /// Widens n×H to n×2H: the ego row keeps its features on the left half,
    /// every other row is shifted to the right half; the vacated half is 0.
    pub fn zero_pad(&mut self, x: TensorId, ego: usize) -> Result<TensorId> {
        let (n, h) = self.matrix_dims(x, "zero_pad")?;
        if ego >= n {
            return Err(AutodiffError::IndexOutOfRange { index: ego, len: n });
        }
        let mut value = vec![0.0; n * 2 * h];
        for r in 0..n {
            let src = &self.nodes[x.0].value[r * h..(r + 1) * h];
            let off = if r == ego { r * 2 * h } else { r * 2 * h + h };
            value[off..off + h].copy_from_slice(src);
        }
        let req = self.requires(x);
        Ok(self.push(Shape::Matrix(n, 2 * h), value, req, Op::ZeroPad { x, ego }))
    }

    /// α = softmax(scaling_logits); scales the four equal blocks of `h` by
    /// α₁..α₄ in order.
    pub fn adaptive_scale(&mut self, h: TensorId, scaling_logits: TensorId) -> Result<TensorId> {
        let len = self.vector_len(h, "adaptive_scale: h")?;
        let k = self.vector_len(scaling_logits, "adaptive_scale: logits")?;
        if k != 4 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "adaptive_scale: need 4 logits, got {k}"
            )));
        }
        if len == 0 || len % 4 != 0 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "adaptive_scale: length {len} not divisible into 4 blocks"
            )));
        }
        let lv = &self.nodes[scaling_logits.0].value;
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFiniteInput);
        }
        let a = softmax_values(lv);
        let alpha = [a[0], a[1], a[2], a[3]];
        let block = len / 4;
        let value =
            self.nodes[h.0].value.iter().enumerate().map(|(j, v)| alpha[j / block] * v).collect();
        let req = self.any_requires(&[h, scaling_logits]);
        Ok(self.push(
            Shape::Vector(len),
            value,
            req,
            Op::AdaptiveScale { h, logits: scaling_logits, alpha },
        ))
    }

    /// Reverse sweep from a scalar loss. Each node is visited exactly once
    /// in reverse execution order; calling this twice on one tape is an
    /// error (rebuild the tape instead of accumulating).
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.shape(loss) != Shape::Scalar {
            return Err(AutodiffError::NonScalarLoss);
        }
        self.backward_done = true;
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contribs = self.node_contributions(i);
            for (target, add) in contribs {
                let g = &mut self.nodes[target.0].grad;
                for (gi, ai) in g.iter_mut().zip(add) {
                    *gi += ai;
                }
            }
        }
        Ok(())
    }

    /// Computes the gradient contributions node `i` sends to each of its
    /// inputs (only those with requires_grad set).
    fn node_contributions(&self, i: usize) -> Vec<(TensorId, Vec<f64>)> {
        let node = &self.nodes[i];
        let dy = &node.grad;
        let val = |t: TensorId| &self.nodes[t.0].value;
        let len = |t: TensorId| self.nodes[t.0].value.len();
        let mut out: Vec<(TensorId, Vec<f64>)> = Vec::new();
        let mut emit = |t: TensorId, g: Vec<f64>| {
            if self.nodes[t.0].requires_grad {
                out.push((t, g));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, a) = self.shape(*x).dims();
                let wb = self.shape(*w).dims().1;
                let (xv, wv) = (val(*x), val(*w));
                if self.requires(*x) {
                    let mut dx = vec![0.0; n * a];
                    for i in 0..n {
                        for k in 0..a {
                            let mut s = 0.0;
                            let dyr = &dy[i * wb..(i + 1) * wb];
                            let wr = &wv[k * wb..(k + 1) * wb];
                            for (d, w) in dyr.iter().zip(wr) {
                                s += d * w;
                            }
                            dx[i * a + k] = s;
                        }
                    }
                    out.push((*x, dx));
                }
                if self.requires(*w) {
                    let mut dw = vec![0.0; a * wb];
                    for i in 0..n {
                        let dyr = &dy[i * wb..(i + 1) * wb];
                        for k in 0..a {
                            let xv = xv[i * a + k];
                            if xv == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[k * wb..(k + 1) * wb];
                            for (d, g) in dwr.iter_mut().zip(dyr) {
                                *d += xv * g;
                            }
                        }
                    }
                    out.push((*w, dw));
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; wb];
                    for i in 0..n {
                        for j in 0..wb {
                            db[j] += dy[i * wb + j];
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Relu { x } => {
                let g =
                    val(*x).iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
                emit(*x, g);
            }
            Op::Dropout { x, mask } => {
                let g = mask.iter().zip(dy).map(|(m, d)| m * d).collect();
                emit(*x, g);
            }
            Op::SelectRows { x, idx } => {
                let h = self.shape(*x).dims().1;
                let mut dx = vec![0.0; len(*x)];
                for (r, &src) in idx.iter().enumerate() {
                    let dr = &dy[r * h..(r + 1) * h];
                    let tr = &mut dx[src * h..(src + 1) * h];
                    for (t, d) in tr.iter_mut().zip(dr) {
                        *t += d;
                    }
                }
                emit(*x, dx);
            }
            Op::SegmentSum { x, targets } => {
                let h = self.shape(*x).dims().1;
                let mut dx = vec![0.0; len(*x)];
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * h..(r + 1) * h].copy_from_slice(&dy[t * h..(t + 1) * h]);
                }
                emit(*x, dx);
            }
            Op::Row { x, i } => {
                let h = dy.len();
                let mut dx = vec![0.0; len(*x)];
                dx[i * h..(i + 1) * h].copy_from_slice(dy);
                emit(*x, dx);
            }
            Op::Pool { x, mode, argmax } => {
                let (k, h) = self.shape(*x).dims();
                let mut dx = vec![0.0; len(*x)];
                if k > 0 {
                    match mode {
                        PoolMode::Sum => {
                            for r in 0..k {
                                for c in 0..h {
                                    dx[r * h + c] = dy[c];
                                }
                            }
                        }
                        PoolMode::Mean => {
                            let inv = 1.0 / k as f64;
                            for r in 0..k {
                                for c in 0..h {
                                    dx[r * h + c] = dy[c] * inv;
                                }
                            }
                        }
                        PoolMode::Max => {
                            for c in 0..h {
                                dx[argmax[c] * h + c] = dy[c];
                            }
                        }
                    }
                }
                emit(*x, dx);
            }
            Op::Concat { a, b } => {
                let (rows, pa) = self.shape(*a).dims();
                let pb = self.shape(*b).dims().1;
                let mut da = vec![0.0; len(*a)];
                let mut db = vec![0.0; len(*b)];
                for r in 0..rows {
                    let dr = &dy[r * (pa + pb)..(r + 1) * (pa + pb)];
                    da[r * pa..(r + 1) * pa].copy_from_slice(&dr[..pa]);
                    db[r * pb..(r + 1) * pb].copy_from_slice(&dr[pa..]);
                }
                emit(*a, da);
                emit(*b, db);
            }
            Op::Maximum { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .zip(dy)
                    .map(|((&x, &y), &d)| if x >= y { d } else { 0.0 })
                    .collect();
                let db: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .zip(dy)
                    .map(|((&x, &y), &d)| if x >= y { 0.0 } else { d })
                    .collect();
                emit(*a, da);
                emit(*b, db);
            }
            Op::Add { a, b } => {
                emit(*a, dy.clone());
                emit(*b, dy.clone());
            }
            Op::Mul { a, b } => {
                let da = val(*b).iter().zip(dy).map(|(v, d)| v * d).collect();
                let db = val(*a).iter().zip(dy).map(|(v, d)| v * d).collect();
                emit(*a, da);
                emit(*b, db);
            }
            Op::Scale { x, c } => {
                emit(*x, dy.iter().map(|d| c * d).collect());
            }
            Op::Sum { x } => {
                emit(*x, vec![dy[0]; len(*x)]);
            }
            Op::Softmax { v } => {
                let y = &node.value;
                let dot: f64 = dy.iter().zip(y).map(|(d, p)| d * p).sum();
                let dv = y.iter().zip(dy).map(|(p, d)| p * (d - dot)).collect();
                emit(*v, dv);
            }
            Op::CrossEntropy { logits, probs, label } => {
                let d = dy[0];
                let g = probs
                    .iter()
                    .enumerate()
                    .map(|(c, p)| d * (p - if c == *label { 1.0 } else { 0.0 }))
                    .collect();
                emit(*logits, g);
            }
            Op::ZeroPad { x, ego } => {
                let (n, h2) = node.shape.dims();
                let h = h2 / 2;
                let mut dx = vec![0.0; len(*x)];
                for r in 0..n {
                    let off = if r == *ego { r * h2 } else { r * h2 + h };
                    dx[r * h..(r + 1) * h].copy_from_slice(&dy[off..off + h]);
                }
                emit(*x, dx);
            }
            Op::AdaptiveScale { h, logits, alpha } => {
                let hv = val(*h);
                let block = hv.len() / 4;
                if self.requires(*h) {
                    let dh = dy.iter().enumerate().map(|(j, d)| alpha[j / block] * d).collect();
                    out.push((*h, dh));
                }
                if self.requires(*logits) {
                    let mut dalpha = [0.0; 4];
                    for (j, (d, v)) in dy.iter().zip(hv).enumerate() {
                        dalpha[j / block] += d * v;
                    }
                    let dot: f64 = dalpha.iter().zip(alpha).map(|(da, a)| da * a).sum();
                    let dl = alpha.iter().zip(&dalpha).map(|(a, da)| a * (da - dot)).collect();
                    out.push((*logits, dl));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, StreamKind};

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len(), "length mismatch: {got:?} vs {want:?}");
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
        }
    }

    /// Compares tape gradients against central differences over every
    /// coordinate of `theta`. `build` must be a pure function of theta.
    fn fd_max_rel_err<F>(theta: &[f64], eps: f64, build: F) -> f64
    where
        F: Fn(&mut Tape, &[f64]) -> (TensorId, Vec<TensorId>),
    {
        let mut tape = Tape::new();
        let (loss, params) = build(&mut tape, theta);
        tape.backward(loss).unwrap();
        let mut analytic = Vec::new();
        for p in &params {
            analytic.extend_from_slice(tape.grad(*p));
        }
        assert_eq!(analytic.len(), theta.len());
        let eval = |th: &[f64]| {
            let mut t = Tape::new();
            let (l, _) = build(&mut t, th);
            t.value(l)[0]
        };
        let coords: Vec<usize> = (0..theta.len()).collect();
        grad_check(&eval, &analytic, theta, eps, &coords).max_rel_err
    }

    fn rand_vec(n: usize, seed: u64, tag: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, StreamKind::GradCheck, tag, 0);
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    /// Pushes |v| below `gap` away from 0 so ReLU/max kinks can't flip
    /// under the finite-difference probe.
    fn clear_kinks(v: &mut [f64], gap: f64) {
        for x in v.iter_mut() {
            if x.abs() < gap {
                *x = if *x >= 0.0 { gap } else { -gap };
            }
        }
    }

    #[test]
    fn linear_examples() {
        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(1, 2), vec![1.0, 0.0]);
        let w = t.param(Shape::Matrix(2, 2), vec![2.0, 0.0, 0.0, 3.0]);
        let b = t.param(Shape::Vector(2), vec![0.0, 0.0]);
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y), &[2.0, 0.0]);

        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let w = t.param(Shape::Matrix(2, 2), vec![1.0, 0.0, 0.0, 1.0]);
        let b = t.param(Shape::Vector(2), vec![0.0, 0.0]);
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn linear_shape_errors() {
        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(1, 3), vec![0.0; 3]);
        let w = t.param(Shape::Matrix(2, 2), vec![0.0; 4]);
        let b = t.param(Shape::Vector(2), vec![0.0; 2]);
        assert!(matches!(t.linear(x, w, b), Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn linear_gradient_vs_finite_differences() {
        // 3×4 · 4×2 with all of x, W, b differentiated.
        for seed in 0..100u64 {
            let theta = rand_vec(12 + 8 + 2, seed, 1);
            let err = fd_max_rel_err(&theta, 1e-5, |t, th| {
                let x = t.param(Shape::Matrix(3, 4), th[..12].to_vec());
                let w = t.param(Shape::Matrix(4, 2), th[12..20].to_vec());
                let b = t.param(Shape::Vector(2), th[20..].to_vec());
                let y = t.linear(x, w, b).unwrap();
                (t.sum(y), vec![x, w, b])
            });
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut t = Tape::new();
        let x = t.param(Shape::Vector(3), vec![-1.0, 0.0, 2.0]);
        let y = t.relu(x);
        assert_eq!(t.value(y), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        // Subgradient at 0 is 0 by definition.
        assert_eq!(t.grad(x), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_finite_differences_away_from_kink() {
        for seed in 0..100u64 {
            let mut theta = rand_vec(12, seed, 2);
            clear_kinks(&mut theta, 0.05);
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let x = t.param(Shape::Matrix(3, 4), th.to_vec());
                let y = t.relu(x);
                (t.sum(y), vec![x])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn segment_sum_examples() {
        let mut t = Tape::new();
        let m = t.input(Shape::Matrix(3, 1), vec![1.0, 2.0, 3.0]);
        let y = t.segment_sum(m, &[0, 0, 1], 2).unwrap();
        assert_eq!(t.value(y), &[3.0, 3.0]);

        let empty = t.input(Shape::Matrix(0, 4), vec![]);
        let z = t.segment_sum(empty, &[], 3).unwrap();
        assert_eq!(t.value(z), &[0.0; 12]);

        assert!(matches!(
            t.segment_sum(m, &[0, 5, 1], 2),
            Err(AutodiffError::TargetOutOfRange { target: 5, segments: 2 })
        ));
    }

    #[test]
    fn segment_sum_gradient_is_scatter() {
        for seed in 0..100u64 {
            let theta = rand_vec(8, seed, 3);
            let targets = [2, 0, 2, 1];
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let m = t.param(Shape::Matrix(4, 2), th.to_vec());
                let y = t.segment_sum(m, &targets, 3).unwrap();
                let y2 = t.mul(y, y).unwrap(); // make per-segment grads distinct
                (t.sum(y2), vec![m])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn segment_sum_conserves_mass() {
        for seed in 0..50u64 {
            let mut rng = stream_rng(seed, StreamKind::GradCheck, 4, 0);
            let m = rng.random_range(0..20);
            let h = rng.random_range(1..6);
            let n = rng.random_range(1..8);
            let data: Vec<f64> = (0..m * h).map(|_| rng.random_range(-5.0..5.0)).collect();
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            let mut t = Tape::new();
            let x = t.input(Shape::Matrix(m, h), data.clone());
            let y = t.segment_sum(x, &targets, n).unwrap();
            for c in 0..h {
                let before: f64 = (0..m).map(|r| data[r * h + c]).sum();
                let after: f64 = (0..n).map(|r| t.value(y)[r * h + c]).sum();
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pool_examples() {
        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(2, 2), vec![1.0, 5.0, 3.0, 2.0]);
        let mx = t.pool(x, PoolMode::Max).unwrap();
        assert_eq!(t.value(mx), &[3.0, 5.0]);
        let mean = t.pool(x, PoolMode::Mean).unwrap();
        assert_eq!(t.value(mean), &[2.0, 3.5]);
        let sum = t.pool(x, PoolMode::Sum).unwrap();
        assert_eq!(t.value(sum), &[4.0, 7.0]);

        for mode in [PoolMode::Max, PoolMode::Mean, PoolMode::Sum] {
            let empty = t.input(Shape::Matrix(0, 3), vec![]);
            let z = t.pool(empty, mode).unwrap();
            assert_eq!(t.value(z), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn pool_max_tie_routes_to_lowest_row() {
        let mut t = Tape::new();
        let x = t.param(Shape::Matrix(2, 2), vec![1.0, 5.0, 1.0, 2.0]);
        let y = t.pool(x, PoolMode::Max).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_gradients_vs_finite_differences() {
        for mode in [PoolMode::Max, PoolMode::Mean, PoolMode::Sum] {
            for seed in 0..100u64 {
                let mut theta = rand_vec(15, seed, 5);
                if mode == PoolMode::Max {
                    // Separate near-ties so the probe can't change the argmax.
                    theta = theta.iter().enumerate().map(|(i, v)| v + i as f64 * 0.011).collect();
                }
                let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                    let x = t.param(Shape::Matrix(5, 3), th.to_vec());
                    let p = t.pool(x, mode).unwrap();
                    let p2 = t.mul(p, p).unwrap();
                    (t.sum(p2), vec![x])
                });
                assert!(err < 1e-4, "{mode} seed {seed}: rel err {err}");
            }
        }
    }

    #[test]
    fn concat_examples() {
        let mut t = Tape::new();
        let a = t.input(Shape::Vector(2), vec![1.0, 2.0]);
        let b = t.input(Shape::Vector(1), vec![3.0]);
        let y = t.concat(a, b).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0, 3.0]);

        let empty = t.input(Shape::Vector(0), vec![]);
        let same = t.concat(a, empty).unwrap();
        assert_eq!(t.value(same), t.value(a));

        let m = t.input(Shape::Matrix(2, 1), vec![9.0, 8.0]);
        assert!(t.concat(a, m).is_err());
    }

    #[test]
    fn concat_gradient_splits() {
        for seed in 0..100u64 {
            let theta = rand_vec(10, seed, 6);
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let a = t.param(Shape::Matrix(2, 2), th[..4].to_vec());
                let b = t.param(Shape::Matrix(2, 3), th[4..].to_vec());
                let y = t.concat(a, b).unwrap();
                let y2 = t.mul(y, y).unwrap();
                (t.sum(y2), vec![a, b])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let v = t.input(Shape::Vector(2), vec![0.0, 0.0]);
        let y = t.softmax(v).unwrap();
        assert_eq!(t.value(y), &[0.5, 0.5]);

        let big = t.input(Shape::Vector(2), vec![1000.0, 0.0]);
        let y = t.softmax(big).unwrap();
        assert!(t.value(y)[0] > 1.0 - 1e-12 && t.value(y)[1] < 1e-12);
        assert!(t.value(y).iter().all(|p| p.is_finite()));

        let nan = t.input(Shape::Vector(2), vec![f64::NAN, 0.0]);
        assert!(matches!(t.softmax(nan), Err(AutodiffError::NonFiniteInput)));
    }

    #[test]
    fn softmax_sums_to_one() {
        for seed in 0..100u64 {
            let mut rng = stream_rng(seed, StreamKind::GradCheck, 7, 0);
            let k = rng.random_range(1..9);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-50.0..50.0)).collect();
            let mut t = Tape::new();
            let id = t.input(Shape::Vector(k), v);
            let y = t.softmax(id).unwrap();
            let s: f64 = t.value(y).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(t.value(y).iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn softmax_jacobian_vs_finite_differences() {
        for seed in 0..100u64 {
            let theta = rand_vec(5, seed, 8);
            let err = fd_max_rel_err(&theta, 1e-5, |t, th| {
                let v = t.param(Shape::Vector(5), th.to_vec());
                let y = t.softmax(v).unwrap();
                // Weighted sum so every Jacobian column is exercised.
                let wts = t.input(Shape::Vector(5), vec![1.0, -2.0, 3.0, 0.5, -1.5]);
                let m = t.mul(y, wts).unwrap();
                (t.sum(m), vec![v])
            });
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let l = t.input(Shape::Vector(2), vec![0.0, 0.0]);
        let loss = t.cross_entropy(l, 0).unwrap();
        assert!((t.value(loss)[0] - 2.0f64.ln()).abs() < 1e-12);

        let l = t.input(Shape::Vector(2), vec![10.0, -10.0]);
        let loss = t.cross_entropy(l, 0).unwrap();
        assert!(t.value(loss)[0] < 1e-8);

        assert!(matches!(
            t.cross_entropy(l, 2),
            Err(AutodiffError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        for seed in 0..100u64 {
            let logits = rand_vec(4, seed, 9);
            let label = (seed % 4) as usize;
            let mut t = Tape::new();
            let l = t.param(Shape::Vector(4), logits.clone());
            let loss = t.cross_entropy(l, label).unwrap();
            t.backward(loss).unwrap();
            let probs = softmax_values(&logits);
            let want: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| p - if c == label { 1.0 } else { 0.0 })
                .collect();
            assert_close(t.grad(l), &want, 1e-12);

            let err = fd_max_rel_err(&logits, 1e-5, |t, th| {
                let l = t.param(Shape::Vector(4), th.to_vec());
                (t.cross_entropy(l, label).unwrap(), vec![l])
            });
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn backward_square() {
        let mut t = Tape::new();
        let w = t.param(Shape::Vector(1), vec![3.0]);
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w), &[6.0]);
    }

    #[test]
    fn backward_linear_weight_grad_is_column_sums() {
        let mut t = Tape::new();
        let xdata = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3×2
        let x = t.input(Shape::Matrix(3, 2), xdata.clone());
        let w = t.param(Shape::Matrix(2, 2), vec![0.3, -0.7, 1.1, 0.2]);
        let b = t.input(Shape::Vector(2), vec![0.0, 0.0]);
        let y = t.linear(x, w, b).unwrap();
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        // d sum(xW) / dW[i][j] = Σ_rows x[·][i], independent of j.
        let col0: f64 = xdata.iter().step_by(2).sum();
        let col1: f64 = xdata.iter().skip(1).step_by(2).sum();
        assert_close(t.grad(w), &[col0, col0, col1, col1], 1e-12);
    }

    #[test]
    fn backward_two_term_loss_adds() {
        let mut t = Tape::new();
        let w = t.param(Shape::Vector(2), vec![1.0, 2.0]);
        let a = t.sum(w);
        let sq = t.mul(w, w).unwrap();
        let b = t.sum(sq);
        let loss = t.add(a, b).unwrap();
        t.backward(loss).unwrap();
        assert_close(t.grad(w), &[1.0 + 2.0, 1.0 + 4.0], 1e-12);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut t = Tape::new();
        let w = t.param(Shape::Vector(1), vec![2.0]);
        let loss = t.sum(w);
        t.backward(loss).unwrap();
        assert!(matches!(t.backward(loss), Err(AutodiffError::BackwardTwice)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(Shape::Vector(2), vec![1.0, 2.0]);
        assert!(matches!(t.backward(w), Err(AutodiffError::NonScalarLoss)));
    }

    #[test]
    fn zero_pad_examples() {
        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let y = t.zero_pad(x, 0).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);

        let single = t.input(Shape::Matrix(1, 2), vec![7.0, 8.0]);
        let y = t.zero_pad(single, 0).unwrap();
        assert_eq!(t.value(y), &[7.0, 8.0, 0.0, 0.0]);

        // Identical features, different roles → different padded rows.
        let twin = t.input(Shape::Matrix(2, 2), vec![5.0, 6.0, 5.0, 6.0]);
        let y = t.zero_pad(twin, 0).unwrap();
        let v = t.value(y);
        assert_ne!(&v[..4], &v[4..]);

        assert!(matches!(t.zero_pad(x, 2), Err(AutodiffError::IndexOutOfRange { .. })));
    }

    #[test]
    fn zero_pad_gradient_vs_finite_differences() {
        for seed in 0..100u64 {
            let theta = rand_vec(8, seed, 10);
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let x = t.param(Shape::Matrix(4, 2), th.to_vec());
                let y = t.zero_pad(x, 1).unwrap();
                let y2 = t.mul(y, y).unwrap();
                (t.sum(y2), vec![x])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn adaptive_scale_examples() {
        let mut t = Tape::new();
        let h = t.input(Shape::Vector(4), vec![4.0, 8.0, 12.0, 16.0]);
        let logits = t.input(Shape::Vector(4), vec![0.0; 4]);
        let y = t.adaptive_scale(h, logits).unwrap();
        assert_close(t.value(y), &[1.0, 2.0, 3.0, 4.0], 1e-12);

        // Softmax shift invariance.
        let l1 = t.input(Shape::Vector(4), vec![1.0, 2.0, 3.0, 4.0]);
        let l2 = t.input(Shape::Vector(4), vec![3.0, 4.0, 5.0, 6.0]);
        let y1 = t.adaptive_scale(h, l1).unwrap();
        let y2 = t.adaptive_scale(h, l2).unwrap();
        assert_close(t.value(y1).to_vec().as_slice(), t.value(y2), 1e-12);

        let bad = t.input(Shape::Vector(6), vec![0.0; 6]);
        assert!(t.adaptive_scale(bad, logits).is_err());
    }

    #[test]
    fn adaptive_scale_gradient_vs_finite_differences() {
        for seed in 0..100u64 {
            let theta = rand_vec(12, seed, 11);
            let err = fd_max_rel_err(&theta, 1e-5, |t, th| {
                let h = t.param(Shape::Vector(8), th[..8].to_vec());
                let l = t.param(Shape::Vector(4), th[8..].to_vec());
                let y = t.adaptive_scale(h, l).unwrap();
                let y2 = t.mul(y, y).unwrap();
                (t.sum(y2), vec![h, l])
            });
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn select_rows_and_row_gradients() {
        for seed in 0..100u64 {
            let theta = rand_vec(9, seed, 12);
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let x = t.param(Shape::Matrix(3, 3), th.to_vec());
                let sel = t.select_rows(x, &[2, 0, 2]).unwrap();
                let r = t.row(x, 1).unwrap();
                let p = t.pool(sel, PoolMode::Sum).unwrap();
                let c = t.concat(p, r).unwrap();
                let c2 = t.mul(c, c).unwrap();
                (t.sum(c2), vec![x])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
        let mut t = Tape::new();
        let x = t.input(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let empty = t.select_rows(x, &[]).unwrap();
        assert_eq!(t.shape(empty), Shape::Matrix(0, 2));
        assert!(t.select_rows(x, &[2]).is_err());
        assert!(t.row(x, 2).is_err());
    }

    #[test]
    fn maximum_gradients_and_ties() {
        let mut t = Tape::new();
        let a = t.param(Shape::Vector(3), vec![1.0, 5.0, 2.0]);
        let b = t.param(Shape::Vector(3), vec![1.0, 3.0, 7.0]);
        let y = t.maximum(a, b).unwrap();
        assert_eq!(t.value(y), &[1.0, 5.0, 7.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        // The tie at index 0 goes to `a`.
        assert_eq!(t.grad(a), &[1.0, 1.0, 0.0]);
        assert_eq!(t.grad(b), &[0.0, 0.0, 1.0]);

        for seed in 0..100u64 {
            let mut theta = rand_vec(8, seed, 13);
            // Keep the two operands separated elementwise.
            for i in 0..4 {
                if (theta[i] - theta[i + 4]).abs() < 0.05 {
                    theta[i] += 0.1;
                }
            }
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let a = t.param(Shape::Vector(4), th[..4].to_vec());
                let b = t.param(Shape::Vector(4), th[4..].to_vec());
                let y = t.maximum(a, b).unwrap();
                let y2 = t.mul(y, y).unwrap();
                (t.sum(y2), vec![a, b])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn dropout_masks_and_scales() {
        let mut t = Tape::new();
        let x = t.param(Shape::Vector(1000), vec![1.0; 1000]);
        let mut rng = stream_rng(3, StreamKind::Dropout, 0, 0);
        let y = t.dropout(x, 0.5, &mut rng).unwrap();
        let kept = t.value(y).iter().filter(|v| **v != 0.0).count();
        assert!(t.value(y).iter().all(|v| *v == 0.0 || *v == 2.0));
        assert!((300..700).contains(&kept));
        let s = t.sum(y);
        t.backward(s).unwrap();
        let gkept = t.grad(x).iter().filter(|v| **v == 2.0).count();
        assert_eq!(gkept, kept);

        let mut t = Tape::new();
        let x = t.input(Shape::Vector(4), vec![1.0, -2.0, 3.0, -4.0]);
        let mut rng = stream_rng(3, StreamKind::Dropout, 0, 0);
        let y = t.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let mut rng = stream_rng(3, StreamKind::Dropout, 0, 0);
        assert!(matches!(t.dropout(x, 1.0, &mut rng), Err(AutodiffError::BadDropout)));
    }

    #[test]
    fn dropout_gradient_with_replayed_mask() {
        for seed in 0..50u64 {
            let theta = rand_vec(10, seed, 14);
            let err = fd_max_rel_err(&theta, 1e-4, |t, th| {
                let x = t.param(Shape::Vector(10), th.to_vec());
                let mut rng = stream_rng(seed, StreamKind::Dropout, 1, 1);
                let y = t.dropout(x, 0.3, &mut rng).unwrap();
                let y2 = t.mul(y, y).unwrap();
                (t.sum(y2), vec![x])
            });
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn forward_values_are_bit_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let x = t.param(Shape::Matrix(4, 3), rand_vec(12, 77, 15));
            let w = t.param(Shape::Matrix(3, 5), rand_vec(15, 77, 16));
            let b = t.param(Shape::Vector(5), rand_vec(5, 77, 17));
            let y = t.linear(x, w, b).unwrap();
            let r = t.relu(y);
            let p = t.pool(r, PoolMode::Max).unwrap();
            let sm = t.softmax(p).unwrap();
            t.value(sm).to_vec()
        };
        assert_eq!(run(), run());
    }
}
