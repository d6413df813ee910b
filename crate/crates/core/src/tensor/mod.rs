//! Dense matrix tensors with reverse-mode automatic differentiation.
//!
//! Every value in the networks is a row-major f64 matrix (scalars are 1x1,
//! row vectors 1xN). Operations build a dynamic graph; [`backward`] runs the
//! reverse sweep and accumulates gradients into leaf tensors. Graphs are
//! rebuilt per forward pass and freed when the loss tensor drops; parameter
//! leaves live in a [`nn::ParamSet`] and persist across steps.
//!
//! Shape mismatches are programming errors and panic with both shapes named.
//! Data-dependent failures (non-scalar loss, missing gradients) return
//! [`TensorError`].

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("no parameter received a gradient; run backward before stepping")]
    MissingGradients,
    #[error("optimizer state holds {state} parameters, registry holds {registry}")]
    StateSizeMismatch { state: usize, registry: usize },
}

static NEXT_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

type BackpropFn = Box<dyn Fn(&Node)>;

pub(crate) struct Node {
    id: u64,
    rows: usize,
    cols: usize,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    /// Set when backward writes into this node's gradient.
    seeded: Cell<bool>,
    parents: Vec<Tensor>,
    backprop: Option<BackpropFn>,
}

/// Handle to a graph node. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor[{}x{}, grad={}]", self.0.rows, self.0.cols, self.0.requires_grad)
    }
}

fn new_node(
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backprop: Option<BackpropFn>,
) -> Tensor {
    assert_eq!(data.len(), rows * cols, "data length {} != {}x{}", data.len(), rows, cols);
    let grad = if requires_grad { vec![0.0; rows * cols] } else { Vec::new() };
    Tensor(Rc::new(Node {
        id: fresh_id(),
        rows,
        cols,
        data: RefCell::new(data),
        grad: RefCell::new(grad),
        requires_grad,
        seeded: Cell::new(false),
        parents,
        backprop,
    }))
}

impl Tensor {
    /// Trainable leaf.
    pub fn leaf(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        new_node(rows, cols, data, true, Vec::new(), None)
    }

    /// Non-trainable constant.
    pub fn constant(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        new_node(rows, cols, data, false, Vec::new(), None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(1, 1, vec![v])
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::constant(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn len(&self) -> usize {
        self.0.rows * self.0.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Copies the values out.
    pub fn values(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Runs `f` over the value slice without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.0.data.borrow())
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on {}x{} tensor", self.0.rows, self.0.cols);
        self.0.data.borrow()[0]
    }

    pub fn value_at(&self, r: usize, c: usize) -> f64 {
        self.0.data.borrow()[r * self.0.cols + c]
    }

    /// Copies the accumulated gradient out (empty for non-grad tensors).
    pub fn grad(&self) -> Vec<f64> {
        self.0.grad.borrow().clone()
    }

    /// True once backward has written into this tensor's gradient.
    pub fn grad_seeded(&self) -> bool {
        self.0.seeded.get()
    }

    /// Overwrites values in place. Used by the optimizer and checkpoint
    /// loading; never call on interior graph nodes.
    pub fn set_values(&self, v: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), v.len(), "set_values length {} != {}", v.len(), d.len());
        d.copy_from_slice(v);
    }

    pub fn fill(&self, v: f64) {
        self.0.data.borrow_mut().fill(v);
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().fill(0.0);
        self.0.seeded.set(false);
    }

    /// A constant copy of the current values, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.rows, self.0.cols, self.values())
    }
}

fn any_grad(parents: &[&Tensor]) -> bool {
    parents.iter().any(|t| t.0.requires_grad)
}

fn accumulate(node: &Node, f: impl FnOnce(&mut [f64])) {
    if node.requires_grad {
        f(&mut node.grad.borrow_mut());
        node.seeded.set(true);
    }
}

fn assert_same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert!(
        a.rows() == b.rows() && a.cols() == b.cols(),
        "{op}: shape mismatch {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
}

/// Elementwise a + b.
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape("add", a, b);
    let data: Vec<f64> =
        a.0.data.borrow().iter().zip(b.0.data.borrow().iter()).map(|(x, y)| x + y).collect();
    if !any_grad(&[a, b]) {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let (pa, pb) = (a.clone(), b.clone());
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone(), b.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| ga.iter_mut().zip(g.iter()).for_each(|(d, s)| *d += s));
            accumulate(&pb.0, |gb| gb.iter_mut().zip(g.iter()).for_each(|(d, s)| *d += s));
        })),
    )
}

/// Elementwise a - b.
pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape("sub", a, b);
    let data: Vec<f64> =
        a.0.data.borrow().iter().zip(b.0.data.borrow().iter()).map(|(x, y)| x - y).collect();
    if !any_grad(&[a, b]) {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let (pa, pb) = (a.clone(), b.clone());
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone(), b.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| ga.iter_mut().zip(g.iter()).for_each(|(d, s)| *d += s));
            accumulate(&pb.0, |gb| gb.iter_mut().zip(g.iter()).for_each(|(d, s)| *d -= s));
        })),
    )
}

/// Elementwise a * b (Hadamard).
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape("mul", a, b);
    let data: Vec<f64> =
        a.0.data.borrow().iter().zip(b.0.data.borrow().iter()).map(|(x, y)| x * y).collect();
    if !any_grad(&[a, b]) {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let (pa, pb) = (a.clone(), b.clone());
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone(), b.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            {
                let bv = pb.0.data.borrow();
                accumulate(&pa.0, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
            }
            let av = pa.0.data.borrow();
            accumulate(&pb.0, |gb| {
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        })),
    )
}

/// a * s for a compile-time constant s.
pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let data: Vec<f64> = a.0.data.borrow().iter().map(|x| x * s).collect();
    if !a.0.requires_grad {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let pa = a.clone();
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * s;
                }
            });
        })),
    )
}

/// a * s where s is a trainable 1x1 tensor.
pub fn scale_by(a: &Tensor, s: &Tensor) -> Tensor {
    assert_eq!(s.len(), 1, "scale_by: scale must be 1x1, got {}x{}", s.rows(), s.cols());
    let sv = s.item();
    let data: Vec<f64> = a.0.data.borrow().iter().map(|x| x * sv).collect();
    if !any_grad(&[a, s]) {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let (pa, ps) = (a.clone(), s.clone());
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone(), s.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * sv;
                }
            });
            let av = pa.0.data.borrow();
            accumulate(&ps.0, |gs| {
                gs[0] += g.iter().zip(av.iter()).map(|(gi, ai)| gi * ai).sum::<f64>();
            });
        })),
    )
}

/// Matrix product [m,k]x[k,n] -> [m,n] via dgemm.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols(),
        b.rows(),
        "matmul: inner dims differ, {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0f64; m * n];
    {
        let av = a.0.data.borrow();
        let bv = b.0.data.borrow();
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                av.as_ptr(),
                k as isize,
                1,
                bv.as_ptr(),
                n as isize,
                1,
                0.0,
                data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    if !any_grad(&[a, b]) {
        return Tensor::constant(m, n, data);
    }
    let (pa, pb) = (a.clone(), b.clone());
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone(), b.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            // dA += dC . B^T
            if pa.0.requires_grad {
                let bv = pb.0.data.borrow();
                accumulate(&pa.0, |ga| unsafe {
                    matrixmultiply::dgemm(
                        m,
                        n,
                        k,
                        1.0,
                        g.as_ptr(),
                        n as isize,
                        1,
                        bv.as_ptr(),
                        1,
                        n as isize,
                        1.0,
                        ga.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                });
            }
            // dB += A^T . dC
            if pb.0.requires_grad {
                let av = pa.0.data.borrow();
                accumulate(&pb.0, |gb| unsafe {
                    matrixmultiply::dgemm(
                        k,
                        m,
                        n,
                        1.0,
                        av.as_ptr(),
                        1,
                        k as isize,
                        g.as_ptr(),
                        n as isize,
                        1,
                        1.0,
                        gb.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                });
            }
        })),
    )
}

/// Transpose.
pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let av = a.0.data.borrow();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = av[i * n + j];
        }
    }
    drop(av);
    if !a.0.requires_grad {
        return Tensor::constant(n, m, data);
    }
    let pa = a.clone();
    new_node(
        n,
        m,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            });
        })),
    )
}

/// Stacks tensors with equal column counts on top of each other.
pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let cols = parts[0].cols();
    for p in parts {
        assert_eq!(p.cols(), cols, "concat_rows: column mismatch {} vs {}", p.cols(), cols);
    }
    let rows: usize = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(&p.0.data.borrow());
    }
    let needs: Vec<&Tensor> = parts.to_vec();
    if !any_grad(&needs) {
        return Tensor::constant(rows, cols, data);
    }
    let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    let owned2 = owned.clone();
    new_node(
        rows,
        cols,
        data,
        true,
        owned,
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let mut offset = 0usize;
            for p in &owned2 {
                let chunk = p.rows() * p.cols();
                accumulate(&p.0, |gp| {
                    for i in 0..chunk {
                        gp[i] += g[offset + i];
                    }
                });
                offset += chunk;
            }
        })),
    )
}

/// Concatenates tensors with equal row counts side by side.
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let rows = parts[0].rows();
    for p in parts {
        assert_eq!(p.rows(), rows, "concat_cols: row mismatch {} vs {}", p.rows(), rows);
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = vec![0.0; rows * cols];
    let mut col_off = 0usize;
    for p in parts {
        let pv = p.0.data.borrow();
        let pc = p.cols();
        for r in 0..rows {
            data[r * cols + col_off..r * cols + col_off + pc]
                .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
        }
        col_off += pc;
    }
    let needs: Vec<&Tensor> = parts.to_vec();
    if !any_grad(&needs) {
        return Tensor::constant(rows, cols, data);
    }
    let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    let owned2 = owned.clone();
    new_node(
        rows,
        cols,
        data,
        true,
        owned,
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let mut col_off = 0usize;
            for p in &owned2 {
                let pc = p.cols();
                accumulate(&p.0, |gp| {
                    for r in 0..rows {
                        for c in 0..pc {
                            gp[r * pc + c] += g[r * cols + col_off + c];
                        }
                    }
                });
                col_off += pc;
            }
        })),
    )
}

/// Column slice [start, start+len).
pub fn narrow_cols(a: &Tensor, start: usize, len: usize) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    assert!(start + len <= n, "narrow_cols: {start}+{len} exceeds {n} columns");
    let av = a.0.data.borrow();
    let mut data = Vec::with_capacity(m * len);
    for r in 0..m {
        data.extend_from_slice(&av[r * n + start..r * n + start + len]);
    }
    drop(av);
    if !a.0.requires_grad {
        return Tensor::constant(m, len, data);
    }
    let pa = a.clone();
    new_node(
        m,
        len,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for r in 0..m {
                    for c in 0..len {
                        ga[r * n + start + c] += g[r * len + c];
                    }
                }
            });
        })),
    )
}

/// Row gather: out[i] = a[idx[i]]. Indices may repeat (broadcast by repeat).
pub fn gather_rows(a: &Tensor, idx: Rc<Vec<usize>>) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let av = a.0.data.borrow();
    let mut data = Vec::with_capacity(idx.len() * n);
    for &i in idx.iter() {
        assert!(i < m, "gather_rows: index {i} out of {m} rows");
        data.extend_from_slice(&av[i * n..(i + 1) * n]);
    }
    drop(av);
    let rows = idx.len();
    if !a.0.requires_grad {
        return Tensor::constant(rows, n, data);
    }
    let pa = a.clone();
    new_node(
        rows,
        n,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        ga[i * n + c] += g[r * n + c];
                    }
                }
            });
        })),
    )
}

/// Rectified linear unit; the subgradient at 0 is 0.
pub fn relu(a: &Tensor) -> Tensor {
    let data: Vec<f64> = a.0.data.borrow().iter().map(|&x| x.max(0.0)).collect();
    if !a.0.requires_grad {
        return Tensor::constant(a.rows(), a.cols(), data);
    }
    let pa = a.clone();
    new_node(
        a.rows(),
        a.cols(),
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let av = pa.0.data.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..ga.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            });
        })),
    )
}

/// Row-wise softmax (normalizes over the last dimension).
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let av = a.0.data.borrow();
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        let row = &av[r * n..(r + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..n {
            let e = (row[c] - mx).exp();
            data[r * n + c] = e;
            sum += e;
        }
        for c in 0..n {
            data[r * n + c] /= sum;
        }
    }
    drop(av);
    if !a.0.requires_grad {
        return Tensor::constant(m, n, data);
    }
    let pa = a.clone();
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let y = out.data.borrow();
            accumulate(&pa.0, |ga| {
                for r in 0..m {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs.iter()).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        ga[r * n + c] += ys[c] * (gs[c] - dot);
                    }
                }
            });
        })),
    )
}

/// Row-wise normalization to zero mean and unit variance (no affine part).
pub fn layer_norm_rows(a: &Tensor, eps: f64) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    assert!(n > 0, "layer_norm_rows on empty rows");
    let av = a.0.data.borrow();
    let mut data = vec![0.0; m * n];
    let mut inv_std = vec![0.0; m];
    for r in 0..m {
        let row = &av[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..n {
            data[r * n + c] = (row[c] - mean) * is;
        }
    }
    drop(av);
    if !a.0.requires_grad {
        return Tensor::constant(m, n, data);
    }
    let pa = a.clone();
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let y = out.data.borrow();
            accumulate(&pa.0, |ga| {
                for r in 0..m {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let mean_g = gs.iter().sum::<f64>() / n as f64;
                    let mean_gy: f64 =
                        gs.iter().zip(ys.iter()).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        ga[r * n + c] += inv_std[r] * (gs[c] - mean_g - ys[c] * mean_gy);
                    }
                }
            });
        })),
    )
}

/// Reduces the set (row) dimension to one row by per-column maximum.
/// Ties route the gradient to the lowest row index.
pub fn max_pool_rows(a: &Tensor) -> Tensor {
    group_max_rows(a, a.rows())
}

/// Per-column max over consecutive groups of `group` rows.
/// Input rows must be a multiple of `group`.
pub fn group_max_rows(a: &Tensor, group: usize) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    assert!(group > 0 && m % group == 0, "group_max_rows: {m} rows not divisible by {group}");
    let out_rows = m / group;
    let av = a.0.data.borrow();
    let mut data = vec![f64::NEG_INFINITY; out_rows * n];
    let mut argmax = vec![0usize; out_rows * n];
    for og in 0..out_rows {
        for r in 0..group {
            let row = og * group + r;
            for c in 0..n {
                let v = av[row * n + c];
                // strict > keeps the lowest row on ties
                if v > data[og * n + c] {
                    data[og * n + c] = v;
                    argmax[og * n + c] = row;
                }
            }
        }
    }
    drop(av);
    if !a.0.requires_grad {
        return Tensor::constant(out_rows, n, data);
    }
    let pa = a.clone();
    new_node(
        out_rows,
        n,
        data,
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..g.len() {
                    let c = i % n;
                    ga[argmax[i] * n + c] += g[i];
                }
            });
        })),
    )
}

/// Adds a 1xN row vector to every row of a MxN matrix.
pub fn add_row(a: &Tensor, row: &Tensor) -> Tensor {
    assert_eq!(row.rows(), 1, "add_row: bias must be a row vector");
    assert_eq!(
        a.cols(),
        row.cols(),
        "add_row: width mismatch {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        row.rows(),
        row.cols()
    );
    let (m, n) = (a.rows(), a.cols());
    let av = a.0.data.borrow();
    let rv = row.0.data.borrow();
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            data[r * n + c] = av[r * n + c] + rv[c];
        }
    }
    drop(av);
    drop(rv);
    if !any_grad(&[a, row]) {
        return Tensor::constant(m, n, data);
    }
    let (pa, pr) = (a.clone(), row.clone());
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone(), row.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            accumulate(&pa.0, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i];
                }
            });
            accumulate(&pr.0, |gr| {
                for r in 0..m {
                    for c in 0..n {
                        gr[c] += g[r * n + c];
                    }
                }
            });
        })),
    )
}

/// Multiplies every row of a MxN matrix by a 1xN row vector.
pub fn mul_row(a: &Tensor, row: &Tensor) -> Tensor {
    assert_eq!(row.rows(), 1, "mul_row: gain must be a row vector");
    assert_eq!(
        a.cols(),
        row.cols(),
        "mul_row: width mismatch {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        row.rows(),
        row.cols()
    );
    let (m, n) = (a.rows(), a.cols());
    let av = a.0.data.borrow();
    let rv = row.0.data.borrow();
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            data[r * n + c] = av[r * n + c] * rv[c];
        }
    }
    drop(av);
    drop(rv);
    if !any_grad(&[a, row]) {
        return Tensor::constant(m, n, data);
    }
    let (pa, pr) = (a.clone(), row.clone());
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone(), row.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            {
                let rv = pr.0.data.borrow();
                accumulate(&pa.0, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[r * n + c] * rv[c];
                        }
                    }
                });
            }
            let av = pa.0.data.borrow();
            accumulate(&pr.0, |gr| {
                for r in 0..m {
                    for c in 0..n {
                        gr[c] += g[r * n + c] * av[r * n + c];
                    }
                }
            });
        })),
    )
}

/// Sum of all entries as a 1x1 tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    let s: f64 = a.0.data.borrow().iter().sum();
    if !a.0.requires_grad {
        return Tensor::scalar(s);
    }
    let pa = a.clone();
    new_node(
        1,
        1,
        vec![s],
        true,
        vec![a.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow()[0];
            accumulate(&pa.0, |ga| {
                for v in ga.iter_mut() {
                    *v += g;
                }
            });
        })),
    )
}

/// Mean of all entries as a 1x1 tensor.
pub fn mean_all(a: &Tensor) -> Tensor {
    scale(&sum_all(a), 1.0 / a.len() as f64)
}

/// Differentiable Chamfer-L1 loss between a predicted [P,3] matrix and a
/// constant target [G,3] matrix: mean nearest L1 distance in both
/// directions, summed. Nearest neighbors use the L1 metric with
/// lowest-index ties; the same definition as the metric kernel.
pub fn chamfer_l1_loss(pred: &Tensor, target: &Tensor) -> Tensor {
    assert_eq!(pred.cols(), 3, "chamfer_l1_loss: pred must be Px3, got {}x{}", pred.rows(), pred.cols());
    assert_eq!(target.cols(), 3, "chamfer_l1_loss: target must be Gx3");
    let p = pred.rows();
    let g = target.rows();
    assert!(p > 0 && g > 0, "chamfer_l1_loss: empty input {}x3 vs {}x3", p, g);
    let pv = pred.0.data.borrow();
    let tv = target.0.data.borrow();

    let l1 = |a: &[f64], b: &[f64]| -> f64 {
        (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
    };

    // pred -> target
    let mut near_pt = vec![0usize; p];
    let mut sum_pt = 0.0;
    for i in 0..p {
        let pi = &pv[i * 3..i * 3 + 3];
        let mut best = f64::INFINITY;
        let mut bj = 0usize;
        for j in 0..g {
            let d = l1(pi, &tv[j * 3..j * 3 + 3]);
            if d < best {
                best = d;
                bj = j;
            }
        }
        near_pt[i] = bj;
        sum_pt += best;
    }
    // target -> pred
    let mut near_tp = vec![0usize; g];
    let mut sum_tp = 0.0;
    for j in 0..g {
        let tj = &tv[j * 3..j * 3 + 3];
        let mut best = f64::INFINITY;
        let mut bi = 0usize;
        for i in 0..p {
            let d = l1(tj, &pv[i * 3..i * 3 + 3]);
            if d < best {
                best = d;
                bi = i;
            }
        }
        near_tp[j] = bi;
        sum_tp += best;
    }
    let value = sum_pt / p as f64 + sum_tp / g as f64;
    drop(pv);
    drop(tv);

    if !pred.0.requires_grad {
        return Tensor::scalar(value);
    }
    let pp = pred.clone();
    let tt = target.clone();
    new_node(
        1,
        1,
        vec![value],
        true,
        vec![pred.clone(), target.clone()],
        Some(Box::new(move |out| {
            let go = out.grad.borrow()[0];
            let pv = pp.0.data.borrow();
            let tv = tt.0.data.borrow();
            accumulate(&pp.0, |gp| {
                let wp = go / p as f64;
                for i in 0..p {
                    let j = near_pt[i];
                    for c in 0..3 {
                        let d = pv[i * 3 + c] - tv[j * 3 + c];
                        gp[i * 3 + c] += wp * sign(d);
                    }
                }
                let wg = go / g as f64;
                for j in 0..g {
                    let i = near_tp[j];
                    for c in 0..3 {
                        let d = pv[i * 3 + c] - tv[j * 3 + c];
                        gp[i * 3 + c] += wg * sign(d);
                    }
                }
            });
        })),
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairwise Euclidean distance matrix between two [*, 3] coordinate
/// tensors: out[i, j] = |a_i - b_j|. Coincident pairs use a zero
/// subgradient.
pub fn pairwise_dist(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), 3, "pairwise_dist: a must be Mx3, got {}x{}", a.rows(), a.cols());
    assert_eq!(b.cols(), 3, "pairwise_dist: b must be Nx3, got {}x{}", b.rows(), b.cols());
    let (m, n) = (a.rows(), b.rows());
    let av = a.0.data.borrow();
    let bv = b.0.data.borrow();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let dx = av[i * 3] - bv[j * 3];
            let dy = av[i * 3 + 1] - bv[j * 3 + 1];
            let dz = av[i * 3 + 2] - bv[j * 3 + 2];
            data[i * n + j] = (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    drop(av);
    drop(bv);
    if !any_grad(&[a, b]) {
        return Tensor::constant(m, n, data);
    }
    let (pa, pb) = (a.clone(), b.clone());
    new_node(
        m,
        n,
        data,
        true,
        vec![a.clone(), b.clone()],
        Some(Box::new(move |out| {
            let g = out.grad.borrow();
            let d = out.data.borrow();
            let av = pa.0.data.borrow();
            let bv = pb.0.data.borrow();
            let unit = |i: usize, j: usize, c: usize| -> f64 {
                let dist = d[i * n + j];
                if dist == 0.0 {
                    return 0.0;
                }
                (av[i * 3 + c] - bv[j * 3 + c]) / dist
            };
            if pa.0.requires_grad {
                accumulate(&pa.0, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            let gi = g[i * n + j];
                            if gi != 0.0 {
                                for c in 0..3 {
                                    ga[i * 3 + c] += gi * unit(i, j, c);
                                }
                            }
                        }
                    }
                });
            }
            if pb.0.requires_grad {
                accumulate(&pb.0, |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            let gi = g[i * n + j];
                            if gi != 0.0 {
                                for c in 0..3 {
                                    gb[j * 3 + c] -= gi * unit(i, j, c);
                                }
                            }
                        }
                    }
                });
            }
        })),
    )
}

/// Reverse sweep from a scalar loss; accumulates gradients into every
/// reachable tensor that requires them.
pub fn backward(loss: &Tensor) -> Result<(), TensorError> {
    if loss.len() != 1 {
        return Err(TensorError::NonScalarLoss { rows: loss.rows(), cols: loss.cols() });
    }
    if !loss.0.requires_grad {
        // loss does not depend on any trainable leaf; nothing to do
        return Ok(());
    }
    // iterative postorder over parents
    let mut order: Vec<Rc<Node>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Rc<Node>, usize)> = vec![(loss.0.clone(), 0)];
    visited.insert(loss.0.id);
    while let Some((node, child)) = stack.pop() {
        if child < node.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.parents[child].0.clone();
            if parent.requires_grad && visited.insert(parent.id) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    loss.0.grad.borrow_mut()[0] += 1.0;
    loss.0.seeded.set(true);
    for node in order.iter().rev() {
        if let Some(bp) = &node.backprop {
            bp(node);
        }
    }
    Ok(())
}
