//! Dense f64 tensors and a tape-based reverse-mode autodiff engine.
//!
//! The tape records every operation of a forward pass in topological order;
//! [`Tape::backward`] replays it in reverse to accumulate gradients for the
//! leaf parameters. Graphs are rebuilt per batch, nothing persists across
//! steps.

use ndarray::ArrayView2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f64 tensor. All stored values are finite; constructors
/// reject NaN/Inf rather than letting it propagate silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                detail: format!("shape {:?} expects {} values, got {}", shape, expect, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite("new"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(v: Vec<f64>) -> Result<Self> {
        let n = v.len();
        Tensor::new(vec![n], v)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Tensor::matrix(r, c, rows.iter().flatten().copied().collect())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value; panics if the tensor is not single-element.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a 2-d tensor (a 1-d tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on tensor of shape {:?}", self.shape),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn view2(&self) -> Result<ArrayView2<'_, f64>> {
        let (r, c) = match self.shape.len() {
            2 => (self.shape[0], self.shape[1]),
            1 => (1, self.shape[0]),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("expected matrix, got shape {:?}", self.shape),
                })
            }
        };
        Ok(ArrayView2::from_shape((r, c), &self.data).expect("contiguous row-major"))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    // a is [n, d], b is [d]; broadcast b across rows of a
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    // constant scale / offset
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    Mean(Var),
    Max(Var),
    SqNormRows(Var),
    SelectCols(Var, Vec<usize>),
    // interleave columns of a (at a_cols) and b (at b_cols) into a [n, width]
    CombineCols { a: Var, a_cols: Vec<usize>, b: Var, b_cols: Vec<usize>, width: usize },
    // multiply every element of a by a scalar variable
    ScaleByVar(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation as a linear tape of operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        if !value.data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite(op_name));
        }
        Ok(self.push(op, value))
    }

    /// Register a leaf tensor (parameter or input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a).view2()?;
        let vb = self.value(b).view2()?;
        if va.ncols() != vb.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {} vs {}", va.ncols(), vb.nrows()),
            });
        }
        let out = va.dot(&vb);
        let (m, p) = (out.nrows(), out.ncols());
        let data = out.iter().copied().collect();
        let value = Tensor { shape: vec![m, p], data };
        self.push_checked("matmul", Op::MatMul(a, b), value)
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<BinKind> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa == sb {
            return Ok(BinKind::Same);
        }
        // row broadcast: [n, d] op [d]
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok(BinKind::RowBroadcast);
        }
        Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", sa, sb),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        match self.binary_shapes("add", a, b)? {
            BinKind::Same => {
                let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("add", Op::Add(a, b), value)
            }
            BinKind::RowBroadcast => {
                let data = row_map(self.value(a), self.value(b), |x, y| x + y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("add", Op::AddRow(a, b), value)
            }
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        match self.binary_shapes("sub", a, b)? {
            BinKind::Same => {
                let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("sub", Op::Sub(a, b), value)
            }
            BinKind::RowBroadcast => {
                let data = row_map(self.value(a), self.value(b), |x, y| x - y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("sub", Op::SubRow(a, b), value)
            }
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        match self.binary_shapes("mul", a, b)? {
            BinKind::Same => {
                let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("mul", Op::Mul(a, b), value)
            }
            BinKind::RowBroadcast => {
                let data = row_map(self.value(a), self.value(b), |x, y| x * y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("mul", Op::MulRow(a, b), value)
            }
        }
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        match self.binary_shapes("div", a, b)? {
            BinKind::Same => {
                if self.value(b).data.iter().any(|&v| v == 0.0) {
                    return Err(TensorError::DivisionByZero);
                }
                let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
                let value = Tensor { shape: self.value(a).shape.clone(), data };
                self.push_checked("div", Op::Div(a, b), value)
            }
            BinKind::RowBroadcast => Err(TensorError::ShapeMismatch {
                op: "div",
                detail: "broadcast division not supported".into(),
            }),
        }
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("relu", Op::Relu(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&x| x.tanh()).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("tanh", Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&x| x.exp()).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("exp", Op::Exp(a), value)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&x| x * k).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("scale", Op::Scale(a, k), value)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&x| x + k).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("offset", Op::Offset(a), value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(TensorError::EmptyInput("sum"));
        }
        let s: f64 = self.value(a).data.iter().sum();
        self.push_checked("sum", Op::Sum(a), Tensor { shape: vec![1], data: vec![s] })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(TensorError::EmptyInput("mean"));
        }
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data.iter().sum::<f64>() / n;
        self.push_checked("mean", Op::Mean(a), Tensor { shape: vec![1], data: vec![s] })
    }

    /// Maximum element; gradient routes to the first attaining index.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(TensorError::EmptyInput("max"));
        }
        let m = self.value(a).data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.push_checked("max", Op::Max(a), Tensor { shape: vec![1], data: vec![m] })
    }

    /// Per-row squared Euclidean norm of a [n, d] tensor, result [n].
    pub fn sq_norm_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::EmptyInput("sq_norm_rows"));
        }
        if t.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "sq_norm_rows",
                detail: format!("expected matrix, got {:?}", t.shape),
            });
        }
        let (n, d) = (t.shape[0], t.shape[1]);
        let data: Vec<f64> = (0..n)
            .map(|i| t.data[i * d..(i + 1) * d].iter().map(|x| x * x).sum())
            .collect();
        self.push_checked("sq_norm_rows", Op::SqNormRows(a), Tensor { shape: vec![n], data })
    }

    /// Column subset of a [n, d] tensor, result [n, idx.len()].
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "select_cols",
                detail: format!("expected matrix, got {:?}", t.shape),
            });
        }
        let (n, d) = (t.shape[0], t.shape[1]);
        if idx.iter().any(|&j| j >= d) {
            return Err(TensorError::ShapeMismatch {
                op: "select_cols",
                detail: format!("column index out of range for width {}", d),
            });
        }
        let k = idx.len();
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = &t.data[i * d..(i + 1) * d];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        self.push_checked(
            "select_cols",
            Op::SelectCols(a, idx.to_vec()),
            Tensor { shape: vec![n, k], data },
        )
    }

    /// Inverse of two column selections: place columns of `a` at `a_cols` and
    /// columns of `b` at `b_cols` in a [n, width] output.
    pub fn combine_cols(
        &mut self,
        a: Var,
        a_cols: &[usize],
        b: Var,
        b_cols: &[usize],
        width: usize,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[0] != tb.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "combine_cols",
                detail: format!("{:?} vs {:?}", ta.shape, tb.shape),
            });
        }
        if ta.shape[1] != a_cols.len()
            || tb.shape[1] != b_cols.len()
            || a_cols.len() + b_cols.len() != width
        {
            return Err(TensorError::ShapeMismatch {
                op: "combine_cols",
                detail: "column index lists do not tile the output width".into(),
            });
        }
        let n = ta.shape[0];
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (j, &c) in a_cols.iter().enumerate() {
                data[i * width + c] = ta.data[i * a_cols.len() + j];
            }
            for (j, &c) in b_cols.iter().enumerate() {
                data[i * width + c] = tb.data[i * b_cols.len() + j];
            }
        }
        self.push_checked(
            "combine_cols",
            Op::CombineCols {
                a,
                a_cols: a_cols.to_vec(),
                b,
                b_cols: b_cols.to_vec(),
                width,
            },
            Tensor { shape: vec![n, width], data },
        )
    }

    /// Multiply every element of `a` by the scalar variable `s`.
    pub fn scale_by_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_by_var",
                detail: format!("scale must be scalar, got {:?}", self.value(s).shape),
            });
        }
        let k = self.value(s).item();
        let data = self.value(a).data.iter().map(|&x| x * k).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        self.push_checked("scale_by_var", Op::ScaleByVar(a, s), value)
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node;
    /// nodes not on a path to the loss get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let va = self.value(*a).view2()?;
                    let vb = self.value(*b).view2()?;
                    let gv = ArrayView2::from_shape((va.nrows(), vb.ncols()), &g)
                        .expect("grad shape");
                    let da = gv.dot(&vb.t());
                    let db = va.t().dot(&gv);
                    // .iter() walks logical (row-major) order; dot() does not
                    // guarantee a C-layout result, so raw memory is unsafe here
                    accum(&mut grads, a.0, da.iter().copied());
                    accum(&mut grads, b.0, db.iter().copied());
                }
                Op::Add(a, b) => {
                    accum(&mut grads, a.0, g.iter().copied());
                    accum(&mut grads, b.0, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, a.0, g.iter().copied());
                    accum(&mut grads, b.0, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    accum(&mut grads, a.0, g.iter().zip(vb).map(|(x, y)| x * y));
                    accum(&mut grads, b.0, g.iter().zip(va).map(|(x, y)| x * y));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    accum(&mut grads, a.0, g.iter().zip(vb).map(|(x, y)| x / y));
                    accum(
                        &mut grads,
                        b.0,
                        g.iter()
                            .zip(va.iter().zip(vb))
                            .map(|(gi, (x, y))| -gi * x / (y * y)),
                    );
                }
                Op::AddRow(a, b) => {
                    accum(&mut grads, a.0, g.iter().copied());
                    let d = self.value(*b).len();
                    accum_colsum(&mut grads, b.0, &g, d, |gi, _, _| gi);
                }
                Op::SubRow(a, b) => {
                    accum(&mut grads, a.0, g.iter().copied());
                    let d = self.value(*b).len();
                    accum_colsum(&mut grads, b.0, &g, d, |gi, _, _| -gi);
                }
                Op::MulRow(a, b) => {
                    let vb = self.value(*b).data.clone();
                    let d = vb.len();
                    accum(
                        &mut grads,
                        a.0,
                        g.iter().enumerate().map(|(k, gi)| gi * vb[k % d]),
                    );
                    let va = &self.value(*a).data;
                    accum_colsum(&mut grads, b.0, &g, d, |gi, k, _| gi * va[k]);
                }
                Op::Relu(a) => {
                    let va = &self.value(*a).data;
                    accum(
                        &mut grads,
                        a.0,
                        g.iter().zip(va).map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 }),
                    );
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value.data;
                    accum(&mut grads, a.0, g.iter().zip(y).map(|(gi, &t)| gi * (1.0 - t * t)));
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value.data;
                    accum(&mut grads, a.0, g.iter().zip(y).map(|(gi, &e)| gi * e));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accum(&mut grads, a.0, g.iter().map(|gi| gi * k));
                }
                Op::Offset(a) => {
                    accum(&mut grads, a.0, g.iter().copied());
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let gv = g[0];
                    accum(&mut grads, a.0, std::iter::repeat(gv).take(n));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let gv = g[0] / n as f64;
                    accum(&mut grads, a.0, std::iter::repeat(gv).take(n));
                }
                Op::Max(a) => {
                    let va = &self.value(*a).data;
                    let m = self.nodes[i].value.data[0];
                    let arg = va.iter().position(|&x| x == m).expect("max attained");
                    let n = va.len();
                    let gv = g[0];
                    accum(
                        &mut grads,
                        a.0,
                        (0..n).map(|k| if k == arg { gv } else { 0.0 }),
                    );
                }
                Op::SqNormRows(a) => {
                    let t = self.value(*a);
                    let d = t.shape[1];
                    accum(
                        &mut grads,
                        a.0,
                        t.data
                            .iter()
                            .enumerate()
                            .map(|(k, &x)| 2.0 * x * g[k / d]),
                    );
                }
                Op::SelectCols(a, idx) => {
                    let t = self.value(*a);
                    let (n, d, k) = (t.shape[0], t.shape[1], idx.len());
                    let mut da = vec![0.0; n * d];
                    for r in 0..n {
                        for (j, &c) in idx.iter().enumerate() {
                            da[r * d + c] += g[r * k + j];
                        }
                    }
                    accum(&mut grads, a.0, da.iter().copied());
                }
                Op::CombineCols { a, a_cols, b, b_cols, width } => {
                    let n = self.value(*a).shape[0];
                    let (ka, kb) = (a_cols.len(), b_cols.len());
                    let mut da = vec![0.0; n * ka];
                    let mut db = vec![0.0; n * kb];
                    for r in 0..n {
                        for (j, &c) in a_cols.iter().enumerate() {
                            da[r * ka + j] = g[r * width + c];
                        }
                        for (j, &c) in b_cols.iter().enumerate() {
                            db[r * kb + j] = g[r * width + c];
                        }
                    }
                    accum(&mut grads, a.0, da.iter().copied());
                    accum(&mut grads, b.0, db.iter().copied());
                }
                Op::ScaleByVar(a, s) => {
                    let k = self.value(*s).item();
                    let va = &self.value(*a).data;
                    accum(&mut grads, a.0, g.iter().map(|gi| gi * k));
                    let ds: f64 = g.iter().zip(va).map(|(gi, &x)| gi * x).sum();
                    accum(&mut grads, s.0, std::iter::once(ds));
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
            grads,
        })
    }
}

enum BinKind {
    Same,
    RowBroadcast,
}

/// Result of a backward pass.
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a node; exact zeros when the node does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor { shape: self.shapes[v.0].clone(), data: g.clone() },
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
}

// a is [n, d], b is [d]
fn row_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let d = b.data.len();
    a.data
        .iter()
        .enumerate()
        .map(|(k, &x)| f(x, b.data[k % d]))
        .collect()
}

fn accum(grads: &mut [Option<Vec<f64>>], idx: usize, vals: impl Iterator<Item = f64>) {
    match &mut grads[idx] {
        Some(g) => {
            for (slot, v) in g.iter_mut().zip(vals) {
                *slot += v;
            }
        }
        None => grads[idx] = Some(vals.collect()),
    }
}

// column sum of the upstream gradient over a [n, d] tensor, with a per-element
// transform f(g, flat_index, col)
fn accum_colsum(
    grads: &mut [Option<Vec<f64>>],
    idx: usize,
    g: &[f64],
    d: usize,
    f: impl Fn(f64, usize, usize) -> f64,
) {
    let mut out = vec![0.0; d];
    for (k, &gi) in g.iter().enumerate() {
        out[k % d] += f(gi, k, k % d);
    }
    accum(grads, idx, out.iter().copied());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of<F>(build: F, leaves: &[Tensor]) -> Vec<Tensor>
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        vars.iter().map(|&v| grads.get(v)).collect()
    }

    /// Central finite differences of a scalar function of flat leaf data.
    fn finite_diff<F>(f: F, x0: &[f64], h: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut out = Vec::with_capacity(x0.len());
        let mut x = x0.to_vec();
        for i in 0..x0.len() {
            x[i] = x0[i] + h;
            let fp = f(&x);
            x[i] = x0[i] - h;
            let fm = f(&x);
            x[i] = x0[i];
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!(
                (x - y).abs() / denom < rel,
                "gradients differ: {} vs {} (rel {})",
                x,
                y,
                (x - y).abs() / denom
            );
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_gradcheck() {
        let a0 = vec![0.3, -0.7, 1.2, 0.5, -0.1, 0.9, 2.0, -1.5, 0.4];
        let b0 = vec![1.1, 0.2, -0.6, 0.7, 0.3, -0.9, -0.2, 0.8, 1.4];
        let eval = |a: &[f64], b: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let va = tape.leaf(Tensor::matrix(3, 3, a.to_vec()).unwrap());
            let vb = tape.leaf(Tensor::matrix(3, 3, b.to_vec()).unwrap());
            let c = tape.matmul(va, vb).unwrap();
            let s = tape.sum(c).unwrap();
            tape.value(s).item()
        };
        let grads = grad_of(
            |t, vs| {
                let c = t.matmul(vs[0], vs[1]).unwrap();
                t.sum(c).unwrap()
            },
            &[
                Tensor::matrix(3, 3, a0.clone()).unwrap(),
                Tensor::matrix(3, 3, b0.clone()).unwrap(),
            ],
        );
        let fa = finite_diff(|a| eval(a, &b0), &a0, 1e-6);
        let fb = finite_diff(|b| eval(&a0, b), &b0, 1e-6);
        assert_close(grads[0].data(), &fa, 1e-6);
        assert_close(grads[1].data(), &fb, 1e-6);
    }

    #[test]
    fn elementwise_trivial() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let z = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0]);

        let b = tape.leaf(Tensor::vector(vec![2.0, 3.0]).unwrap());
        let c = tape.leaf(Tensor::vector(vec![4.0, 5.0]).unwrap());
        let m = tape.mul(b, c).unwrap();
        assert_eq!(tape.value(m).data(), &[8.0, 15.0]);
    }

    #[test]
    fn div_by_zero_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
        assert!(matches!(tape.div(a, b), Err(TensorError::DivisionByZero)));
    }

    #[test]
    fn elementwise_gradcheck() {
        let a0 = vec![0.4, -1.3, 2.2, 0.8];
        let b0 = vec![1.7, 0.6, -0.4, 2.5];
        for op in ["add", "sub", "mul", "div"] {
            let eval = |a: &[f64], b: &[f64]| -> f64 {
                let mut tape = Tape::new();
                let va = tape.leaf(Tensor::vector(a.to_vec()).unwrap());
                let vb = tape.leaf(Tensor::vector(b.to_vec()).unwrap());
                let c = match op {
                    "add" => tape.add(va, vb),
                    "sub" => tape.sub(va, vb),
                    "mul" => tape.mul(va, vb),
                    _ => tape.div(va, vb),
                }
                .unwrap();
                let sq = tape.mul(c, c).unwrap();
                let s = tape.sum(sq).unwrap();
                tape.value(s).item()
            };
            let grads = grad_of(
                |t, vs| {
                    let c = match op {
                        "add" => t.add(vs[0], vs[1]),
                        "sub" => t.sub(vs[0], vs[1]),
                        "mul" => t.mul(vs[0], vs[1]),
                        _ => t.div(vs[0], vs[1]),
                    }
                    .unwrap();
                    let sq = t.mul(c, c).unwrap();
                    t.sum(sq).unwrap()
                },
                &[Tensor::vector(a0.clone()).unwrap(), Tensor::vector(b0.clone()).unwrap()],
            );
            let fa = finite_diff(|a| eval(a, &b0), &a0, 1e-6);
            let fb = finite_diff(|b| eval(&a0, b), &b0, 1e-6);
            assert_close(grads[0].data(), &fa, 1e-6);
            assert_close(grads[1].data(), &fb, 1e-6);
        }
    }

    #[test]
    fn activations_trivial() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0]);
    }

    #[test]
    fn activation_gradcheck_away_from_kink() {
        let a0 = vec![0.9, -1.4, 2.3, -0.6];
        for op in ["relu", "tanh"] {
            let eval = |a: &[f64]| -> f64 {
                let mut tape = Tape::new();
                let va = tape.leaf(Tensor::vector(a.to_vec()).unwrap());
                let c = match op {
                    "relu" => tape.relu(va),
                    _ => tape.tanh(va),
                }
                .unwrap();
                let s = tape.sum(c).unwrap();
                tape.value(s).item()
            };
            let grads = grad_of(
                |t, vs| {
                    let c = match op {
                        "relu" => t.relu(vs[0]),
                        _ => t.tanh(vs[0]),
                    }
                    .unwrap();
                    t.sum(c).unwrap()
                },
                &[Tensor::vector(a0.clone()).unwrap()],
            );
            let fd = finite_diff(eval, &a0, 1e-6);
            assert_close(grads[0].data(), &fd, 1e-6);
        }
    }

    #[test]
    fn reductions_trivial() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.sum(a).unwrap();
        assert_eq!(tape.value(s).item(), 6.0);

        let m = tape.leaf(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let n = tape.sq_norm_rows(m).unwrap();
        assert_eq!(tape.value(n).data(), &[25.0]);
    }

    #[test]
    fn empty_reduction_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![0]));
        assert!(matches!(tape.sum(a), Err(TensorError::EmptyInput(_))));
    }

    #[test]
    fn mean_gradient_is_inverse_n() {
        let a0 = vec![0.3, 1.9, -2.4, 0.7, 1.1];
        let grads = grad_of(
            |t, vs| t.mean(vs[0]).unwrap(),
            &[Tensor::vector(a0.clone()).unwrap()],
        );
        for g in grads[0].data() {
            assert!((g - 0.2).abs() < 1e-15);
        }
        let fd = finite_diff(
            |a| {
                let mut tape = Tape::new();
                let v = tape.leaf(Tensor::vector(a.to_vec()).unwrap());
                let m = tape.mean(v).unwrap();
                tape.value(m).item()
            },
            &a0,
            1e-6,
        );
        assert_close(grads[0].data(), &fd, 1e-6);
    }

    #[test]
    fn max_routes_to_first_attaining_index() {
        let grads = grad_of(
            |t, vs| t.max(vs[0]).unwrap(),
            &[Tensor::vector(vec![1.0, 5.0, 5.0, 2.0]).unwrap()],
        );
        assert_eq!(grads[0].data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let grads = grad_of(
            |t, vs| t.sum(vs[0]).unwrap(),
            &[Tensor::vector(vec![2.0, -3.0, 7.0]).unwrap()],
        );
        assert_eq!(grads[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_half_sq_norm_is_identity() {
        let grads = grad_of(
            |t, vs| {
                let n = t.sq_norm_rows(vs[0]).unwrap();
                let s = t.sum(n).unwrap();
                t.scale(s, 0.5).unwrap()
            },
            &[Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()],
        );
        assert_eq!(grads[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![5.0, 6.0]).unwrap());
        let s = tape.sum(a).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_recomputation_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
            let b = tape.leaf(Tensor::matrix(3, 2, vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2]).unwrap());
            let c = tape.matmul(a, b).unwrap();
            let t = tape.tanh(c).unwrap();
            let s = tape.sum(t).unwrap();
            tape.value(s).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::vector(vec![f64::NAN]).is_err());
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![800.0]).unwrap());
        // exp overflows to +inf and must be reported, not stored
        assert!(matches!(tape.exp(a), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn broadcast_bias_add_gradcheck() {
        let a0 = vec![0.5, -0.2, 1.3, 0.4, -0.9, 0.1];
        let b0 = vec![0.3, -1.1];
        let eval = |a: &[f64], b: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let va = tape.leaf(Tensor::matrix(3, 2, a.to_vec()).unwrap());
            let vb = tape.leaf(Tensor::vector(b.to_vec()).unwrap());
            let c = tape.add(va, vb).unwrap();
            let sq = tape.mul(c, c).unwrap();
            let s = tape.sum(sq).unwrap();
            tape.value(s).item()
        };
        let grads = grad_of(
            |t, vs| {
                let c = t.add(vs[0], vs[1]).unwrap();
                let sq = t.mul(c, c).unwrap();
                t.sum(sq).unwrap()
            },
            &[Tensor::matrix(3, 2, a0.clone()).unwrap(), Tensor::vector(b0.clone()).unwrap()],
        );
        assert_close(grads[0].data(), &finite_diff(|a| eval(a, &b0), &a0, 1e-6), 1e-6);
        assert_close(grads[1].data(), &finite_diff(|b| eval(&a0, b), &b0, 1e-6), 1e-6);
    }

    #[test]
    fn select_combine_roundtrip_gradcheck() {
        let a0 = vec![0.2, -0.5, 0.8, 1.1, -0.3, 0.6, 0.9, -1.2];
        let eval = |a: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let va = tape.leaf(Tensor::matrix(2, 4, a.to_vec()).unwrap());
            let lo = tape.select_cols(va, &[0, 1]).unwrap();
            let hi = tape.select_cols(va, &[2, 3]).unwrap();
            let hi2 = tape.mul(hi, hi).unwrap();
            let y = tape.combine_cols(lo, &[0, 1], hi2, &[2, 3], 4).unwrap();
            let s = tape.sum(y).unwrap();
            tape.value(s).item()
        };
        let grads = grad_of(
            |t, vs| {
                let lo = t.select_cols(vs[0], &[0, 1]).unwrap();
                let hi = t.select_cols(vs[0], &[2, 3]).unwrap();
                let hi2 = t.mul(hi, hi).unwrap();
                let y = t.combine_cols(lo, &[0, 1], hi2, &[2, 3], 4).unwrap();
                t.sum(y).unwrap()
            },
            &[Tensor::matrix(2, 4, a0.clone()).unwrap()],
        );
        assert_close(grads[0].data(), &finite_diff(eval, &a0, 1e-6), 1e-6);
    }

    #[test]
    fn scale_by_var_gradcheck() {
        let a0 = vec![0.7, -1.2, 0.4];
        let s0 = vec![1.6];
        let eval = |a: &[f64], s: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let va = tape.leaf(Tensor::vector(a.to_vec()).unwrap());
            let vs = tape.leaf(Tensor::vector(s.to_vec()).unwrap());
            let c = tape.scale_by_var(va, vs).unwrap();
            let sq = tape.mul(c, c).unwrap();
            let sm = tape.sum(sq).unwrap();
            tape.value(sm).item()
        };
        let grads = grad_of(
            |t, vs| {
                let c = t.scale_by_var(vs[0], vs[1]).unwrap();
                let sq = t.mul(c, c).unwrap();
                t.sum(sq).unwrap()
            },
            &[Tensor::vector(a0.clone()).unwrap(), Tensor::vector(s0.clone()).unwrap()],
        );
        assert_close(grads[0].data(), &finite_diff(|a| eval(a, &s0), &a0, 1e-6), 1e-6);
        assert_close(grads[1].data(), &finite_diff(|s| eval(&a0, s), &s0, 1e-6), 1e-6);
    }
}
