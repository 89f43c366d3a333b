//! Dynamic reverse-mode tape over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! the backward pass is a single reverse sweep.
//!
//! ```
//! use gpdrf::diffcore::Tape;
//! use nalgebra::DMatrix;
//!
//! let tape = Tape::new();
//! let x = tape.param(DMatrix::from_element(1, 1, 3.0));
//! let y = x * x;
//! let g = tape.grad(y, &[x]).unwrap();
//! assert_eq!(g[0][(0, 0)], 6.0);
//! ```

use std::cell::{Ref, RefCell};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

type Mat = DMatrix<f64>;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Cos(usize),
    Sin(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    RowSums(usize),
    ColSums(usize),
    Broadcast(usize),
    Interleave(usize, usize),
    Solve { a: usize, b: usize, factor: Mat },
    LogDet { a: usize, factor: Mat },
    SqDist(usize, usize),
    TrilExpDiag(usize),
    LogSumExpRows(usize),
    ClampMin(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf.
    pub fn param(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_element(1, 1, value))
    }

    fn push(&self, value: Mat, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, x: usize, value: Mat, op: Op) -> Var<'_> {
        let rg = self.requires(&[x]);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Mat, op: Op) -> Var<'_> {
        let rg = self.requires(&[a, b]);
        self.push(value, op, rg)
    }

    /// Gradients of a scalar node with respect to the given leaves.
    ///
    /// Leaves the output does not depend on get zero gradients.
    pub fn grad(&self, output: Var<'_>, params: &[Var<'_>]) -> Result<Vec<Mat>> {
        let nodes = self.nodes.borrow();
        let out = output.id;
        if nodes[out].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "gradient requested of a non-scalar node with shape {:?}",
                nodes[out].value.shape()
            )));
        }
        for p in params {
            if !matches!(nodes[p.id].op, Op::Leaf) {
                return Err(Error::Contract(format!("node {} is not a leaf", p.id)));
            }
        }

        let mut grads: Vec<Option<Mat>> = vec![None; out + 1];
        grads[out] = Some(Mat::from_element(1, 1, 1.0));
        let mut leaf_grads: Vec<Option<Mat>> = vec![None; out + 1];

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |id: usize, contrib: Mat| {
                if !nodes[id].requires_grad {
                    return;
                }
                match &mut grads[id] {
                    Some(existing) => *existing += contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |id: usize| &nodes[id].value;
            match &node.op {
                Op::Leaf => leaf_grads[i] = Some(g),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.component_mul(val(*b)));
                    acc(*b, g.component_mul(val(*a)));
                }
                Op::Neg(a) => acc(*a, -g),
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::Offset(a) => acc(*a, g),
                Op::MatMul(a, b) => {
                    acc(*a, &g * val(*b).transpose());
                    acc(*b, val(*a).tr_mul(&g));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Exp(a) => acc(*a, g.component_mul(&node.value)),
                Op::Log(a) => acc(*a, g.component_div(val(*a))),
                Op::Cos(a) => acc(*a, -g.component_mul(&val(*a).map(f64::sin))),
                Op::Sin(a) => acc(*a, g.component_mul(&val(*a).map(f64::cos))),
                Op::Sqrt(a) => {
                    let d = g.zip_map(&node.value, |g, s| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                    acc(*a, d);
                }
                Op::Square(a) => acc(*a, g.component_mul(val(*a)) * 2.0),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Mat::from_element(r, c, g[(0, 0)]));
                }
                Op::RowSums(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Mat::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::ColSums(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Mat::from_fn(r, c, |_, j| g[(0, j)]));
                }
                Op::Broadcast(a) => {
                    let (r, c) = val(*a).shape();
                    let mut red = g;
                    if r == 1 && red.nrows() != 1 {
                        red = Mat::from_fn(1, red.ncols(), |_, j| red.column(j).sum());
                    }
                    if c == 1 && red.ncols() != 1 {
                        red = Mat::from_fn(red.nrows(), 1, |i, _| red.row(i).sum());
                    }
                    acc(*a, red);
                }
                Op::Interleave(a, b) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Mat::from_fn(r, c, |i, j| g[(i, 2 * j)]));
                    acc(*b, Mat::from_fn(r, c, |i, j| g[(i, 2 * j + 1)]));
                }
                Op::Solve { a, b, factor } => {
                    // X = A⁻¹B with A symmetric: dB = A⁻¹G, dA = -dB Xᵀ.
                    let db = linalg::cholesky_solve(factor, &g).expect("factor shape fixed at forward time");
                    let da = -(&db * node.value.transpose());
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::LogDet { a, factor } => {
                    acc(*a, linalg::cholesky_inverse(factor) * g[(0, 0)]);
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let rs = Mat::from_fn(g.nrows(), 1, |i, _| g.row(i).sum());
                    let cs = Mat::from_fn(g.ncols(), 1, |j, _| g.column(j).sum());
                    let mut da = -(&g * bv);
                    for i in 0..av.nrows() {
                        for k in 0..av.ncols() {
                            da[(i, k)] += rs[(i, 0)] * av[(i, k)];
                        }
                    }
                    let mut db = -g.tr_mul(av);
                    for j in 0..bv.nrows() {
                        for k in 0..bv.ncols() {
                            db[(j, k)] += cs[(j, 0)] * bv[(j, k)];
                        }
                    }
                    acc(*a, da * 2.0);
                    acc(*b, db * 2.0);
                }
                Op::TrilExpDiag(a) => {
                    let n = g.nrows();
                    let d = Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
                        std::cmp::Ordering::Greater => g[(i, j)],
                        std::cmp::Ordering::Equal => g[(i, i)] * node.value[(i, i)],
                        std::cmp::Ordering::Less => 0.0,
                    });
                    acc(*a, d);
                }
                Op::LogSumExpRows(a) => {
                    let x = val(*a);
                    let d = Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
                        g[(i, 0)] * (x[(i, j)] - node.value[(i, 0)]).exp()
                    });
                    acc(*a, d);
                }
                Op::ClampMin(a, lo) => {
                    let d = g.zip_map(val(*a), |g, x| if x > *lo { g } else { 0.0 });
                    acc(*a, d);
                }
            }
        }

        Ok(params
            .iter()
            .map(|p| {
                leaf_grads[p.id]
                    .take()
                    .unwrap_or_else(|| Mat::zeros(nodes[p.id].value.nrows(), nodes[p.id].value.ncols()))
            })
            .collect())
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn node_value(&self) -> Ref<'_, Mat> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Mat {
        self.node_value().clone()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self) -> f64 {
        let v = self.node_value();
        debug_assert_eq!(v.shape(), (1, 1));
        v[(0, 0)]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.node_value().shape()
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let v = self.node_value().map(f);
        self.tape.unary(self.id, v, op)
    }

    /// Repeat a row, column or scalar up to `shape`.
    pub fn broadcast_to(&self, shape: (usize, usize)) -> Var<'t> {
        let (r, c) = self.shape();
        if (r, c) == shape {
            return *self;
        }
        assert!(
            (r == 1 || r == shape.0) && (c == 1 || c == shape.1),
            "cannot broadcast {:?} to {:?}",
            (r, c),
            shape
        );
        let v = {
            let x = self.node_value();
            Mat::from_fn(shape.0, shape.1, |i, j| x[(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })])
        };
        self.tape.unary(self.id, v, Op::Broadcast(self.id))
    }

    fn aligned(self, other: Var<'t>) -> (Var<'t>, Var<'t>) {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return (self, other);
        }
        let target = broadcast_shape(sa, sb)
            .unwrap_or_else(|| panic!("incompatible shapes {sa:?} and {sb:?}"));
        (self.broadcast_to(target), other.broadcast_to(target))
    }

    fn zip(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[a.id].value.zip_map(&nodes[b.id].value, f)
        };
        self.tape.binary(a.id, b.id, v, op(a.id, b.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.map(|x| x * c, Op::Scale(self.id, c))
    }

    pub fn offset(&self, c: f64) -> Var<'t> {
        self.map(|x| x + c, Op::Offset(self.id))
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.ncols(), b.nrows(), "matmul inner dimensions");
            a * b
        };
        self.tape.binary(self.id, other.id, v, Op::MatMul(self.id, other.id))
    }

    pub fn t(&self) -> Var<'t> {
        let v = self.node_value().transpose();
        self.tape.unary(self.id, v, Op::Transpose(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var<'t> {
        self.map(f64::ln, Op::Log(self.id))
    }

    pub fn cos(&self) -> Var<'t> {
        self.map(f64::cos, Op::Cos(self.id))
    }

    pub fn sin(&self) -> Var<'t> {
        self.map(f64::sin, Op::Sin(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.map(|x| x * x, Op::Square(self.id))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&self) -> Var<'t> {
        let v = Mat::from_element(1, 1, self.node_value().sum());
        self.tape.unary(self.id, v, Op::Sum(self.id))
    }

    /// Sum across each row: `r×c → r×1`.
    pub fn row_sums(&self) -> Var<'t> {
        let v = {
            let x = self.node_value();
            Mat::from_fn(x.nrows(), 1, |i, _| x.row(i).sum())
        };
        self.tape.unary(self.id, v, Op::RowSums(self.id))
    }

    /// Sum down each column: `r×c → 1×c`.
    pub fn col_sums(&self) -> Var<'t> {
        let v = {
            let x = self.node_value();
            Mat::from_fn(1, x.ncols(), |_, j| x.column(j).sum())
        };
        self.tape.unary(self.id, v, Op::ColSums(self.id))
    }

    /// Column-interleave two equally shaped nodes: `[a₁, b₁, a₂, b₂, …]`.
    pub fn interleave(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.shape(), b.shape(), "interleave shapes");
            Mat::from_fn(a.nrows(), 2 * a.ncols(), |i, j| if j % 2 == 0 { a[(i, j / 2)] } else { b[(i, j / 2)] })
        };
        self.tape.binary(self.id, other.id, v, Op::Interleave(self.id, other.id))
    }

    /// `self⁻¹ · rhs` for a symmetric positive-definite `self`.
    pub fn solve(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (v, factor) = {
            let nodes = self.tape.nodes.borrow();
            let factor = linalg::cholesky(&nodes[self.id].value)?;
            let v = linalg::cholesky_solve(&factor, &nodes[rhs.id].value)?;
            (v, factor)
        };
        Ok(self.tape.binary(
            self.id,
            rhs.id,
            v,
            Op::Solve {
                a: self.id,
                b: rhs.id,
                factor,
            },
        ))
    }

    /// `log det self` for a symmetric positive-definite `self`.
    pub fn logdet(&self) -> Result<Var<'t>> {
        let factor = linalg::cholesky(&self.node_value())?;
        let v = Mat::from_element(1, 1, linalg::cholesky_logdet(&factor));
        Ok(self.tape.unary(self.id, v, Op::LogDet { a: self.id, factor }))
    }

    /// Pairwise squared Euclidean distances between the rows of two nodes.
    pub fn sq_dist(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.ncols(), b.ncols(), "sq_dist feature dimension");
            Mat::from_fn(a.nrows(), b.nrows(), |i, j| {
                (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum()
            })
        };
        self.tape.binary(self.id, other.id, v, Op::SqDist(self.id, other.id))
    }

    /// Lower triangle of `self` with the diagonal exponentiated.
    pub fn tril_exp_diag(&self) -> Var<'t> {
        let v = {
            let x = self.node_value();
            let n = x.nrows();
            assert_eq!(n, x.ncols(), "tril_exp_diag needs a square matrix");
            Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Greater => x[(i, j)],
                std::cmp::Ordering::Equal => x[(i, i)].exp(),
                std::cmp::Ordering::Less => 0.0,
            })
        };
        self.tape.unary(self.id, v, Op::TrilExpDiag(self.id))
    }

    /// Numerically stable `log Σ_j exp(x_ij)` per row.
    pub fn logsumexp_rows(&self) -> Var<'t> {
        let v = {
            let x = self.node_value();
            Mat::from_fn(x.nrows(), 1, |i, _| {
                let m = x.row(i).max();
                m + x.row(i).iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
        };
        self.tape.unary(self.id, v, Op::LogSumExpRows(self.id))
    }

    pub fn clamp_min(&self, lo: f64) -> Var<'t> {
        self.map(|x| x.max(lo), Op::ClampMin(self.id, lo))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.zip(rhs, |a, b| a + b, Op::Add)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.zip(rhs, |a, b| a - b, Op::Sub)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.zip(rhs, |a, b| a * b, Op::Mul)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.map(|x| -x, Op::Neg(self.id))
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.offset(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.offset(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}
