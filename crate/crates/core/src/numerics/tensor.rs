//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! The gradient graph is rebuilt on every forward pass (define-by-run):
//! each op captures its parents and a backward closure, and `backward`
//! walks the graph in reverse topological order from a scalar loss.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Result, TrinityError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` without recording the gradient graph. Inference helper.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Backward closure: receives the output's gradient and data, and
/// accumulates into the captured parents.
type BackwardFn = Box<dyn Fn(&[f64], &[f64])>;

struct TensorData {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    /// Leaf flag: participates in optimization and reports gradients.
    requires_grad: bool,
    /// True when gradients must flow through this node.
    needs_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Cheap-to-clone handle to a node in the gradient graph.
#[derive(Clone)]
pub struct Tensor(Rc<TensorData>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    // ── Construction ───────────────────────────────────────────────

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel_of(shape) {
            return Err(TrinityError::Contract(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::make(data, shape.to_vec(), vec![], None, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::make(vec![0.0; numel_of(shape)], shape.to_vec(), vec![], None, false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::make(vec![value; numel_of(shape)], shape.to_vec(), vec![], None, false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::make(vec![value], vec![1], vec![], None, false)
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel_of(shape) {
            return Err(TrinityError::Contract(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::make(data, shape.to_vec(), vec![], None, true))
    }

    fn make(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Tensor {
        let track = grad_enabled() && (requires_grad || parents.iter().any(|p| p.0.needs_grad));
        let (parents, backward) = if track { (parents, backward) } else { (vec![], None) };
        Tensor(Rc::new(TensorData {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            needs_grad: track,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    fn op(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        Self::make(data, shape, parents, Some(backward), false)
    }

    pub(crate) fn op_internal(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        Self::op(data, shape, parents, backward)
    }

    pub(crate) fn accumulate_pub(&self, delta: &[f64]) {
        self.accumulate(delta);
    }

    /// Borrow the underlying data. Backward closures use this instead of
    /// cloning operand data at forward time; tensor data is immutable
    /// between a forward pass and its backward sweep.
    pub(crate) fn data_ref(&self) -> std::cell::Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Stable identity of the underlying node; parameters registered in
    /// an optimizer are deduplicated by this.
    pub fn node_id(&self) -> u64 {
        self.0.id
    }

    // ── Accessors ──────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Copy of the tensor's data.
    pub fn value(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn scalar_value(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    /// Gradient if one was populated by a backward pass.
    pub fn grad_opt(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Gradient, with leaves untouched by the last backward reading as zero.
    pub fn grad(&self) -> Vec<f64> {
        self.grad_opt().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place data mutation for optimizers; does not touch the graph.
    pub fn apply_update(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TrinityError::Contract(format!(
                "set_data length {} does not match shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    /// Cut the gradient graph: same data, no parents, no gradient flow.
    pub fn detach(&self) -> Tensor {
        Self::make(self.value(), self.0.shape.clone(), vec![], None, false)
    }

    fn accumulate(&self, delta: &[f64]) {
        let mut g = self.0.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    // ── Backward ───────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Every `requires_grad` leaf
    /// in the graph receives a populated gradient (zero when the leaf
    /// does not influence the loss).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TrinityError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative postorder DFS; reversed it yields consumers before
        // producers, so each node's gradient is complete when visited.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.0.needs_grad && !seen.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        for node in &order {
            if node.0.requires_grad {
                let mut g = node.0.grad.borrow_mut();
                if g.is_none() {
                    *g = Some(vec![0.0; node.numel()]);
                }
            }
        }
        self.accumulate(&[1.0]);
        for node in order.iter().rev() {
            if let Some(back) = &node.0.backward {
                let grad = node.0.grad.borrow().clone();
                if let Some(grad) = grad {
                    let data = node.0.data.borrow();
                    back(&grad, &data);
                }
            }
        }
        Ok(())
    }

    // ── Elementwise binary ops (NumPy-style broadcasting) ──────────

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary_broadcast(self, rhs, "add", |a, b| a + b, |_a, _b| (1.0, 1.0))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary_broadcast(self, rhs, "sub", |a, b| a - b, |_a, _b| (1.0, -1.0))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary_broadcast(self, rhs, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary_broadcast(self, rhs, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x + c).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, _| parent.accumulate(g)),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x * c).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
                parent.accumulate(&scaled);
            }),
        )
    }

    // ── Elementwise unary ops ──────────────────────────────────────

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x.exp()).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, out| {
                let d: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv * y).collect();
                parent.accumulate(&d);
            }),
        )
    }

    pub fn ln(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x.ln()).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let src = parent.data_ref();
                let d: Vec<f64> = g.iter().zip(src.iter()).map(|(gv, x)| gv / x).collect();
                drop(src);
                parent.accumulate(&d);
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x.sqrt()).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, out| {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(gv, y)| if *y == 0.0 { 0.0 } else { gv / (2.0 * y) })
                    .collect();
                parent.accumulate(&d);
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x.tanh()).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, out| {
                let d: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                parent.accumulate(&d);
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|x| x.max(0.0)).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, out| {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                    .collect();
                parent.accumulate(&d);
            }),
        )
    }

    /// Exact GELU, x * Phi(x) with Phi evaluated through erf.
    pub fn gelu(&self) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|&x| gelu_scalar(x)).collect();
        let parent = self.clone();
        Tensor::op(
            data,
            self.0.shape.clone(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let src = parent.data_ref();
                let d: Vec<f64> = g
                    .iter()
                    .zip(src.iter())
                    .map(|(gv, &x)| gv * gelu_grad_scalar(x))
                    .collect();
                drop(src);
                parent.accumulate(&d);
            }),
        )
    }

    // ── Reductions ─────────────────────────────────────────────────

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.0.data.borrow().iter().sum();
        let parent = self.clone();
        let n = self.numel();
        Tensor::op(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |g, _| parent.accumulate(&vec![g[0]; n])),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    // ── Shape ops ──────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(TrinityError::ShapeMismatch {
                op: "reshape",
                lhs: self.0.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let parent = self.clone();
        Ok(Tensor::op(
            self.value(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| parent.accumulate(g)),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.0.shape.len() != 2 {
            return Err(TrinityError::Contract(format!(
                "transpose expects a 2-D tensor, got {:?}",
                self.shape()
            )));
        }
        let (m, n) = (self.0.shape[0], self.0.shape[1]);
        let src = self.0.data.borrow();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        drop(src);
        let parent = self.clone();
        Ok(Tensor::op(
            data,
            vec![n, m],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                parent.accumulate(&d);
            }),
        ))
    }

    /// Contiguous slice along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = &self.0.shape;
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TrinityError::Contract(format!(
                "slice axis {axis} range {start}..{} out of bounds for shape {:?}",
                start + len,
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let ax = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.0.data.borrow();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ax * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let parent = self.clone();
        let total = self.numel();
        Ok(Tensor::op(
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![0.0; total];
                for o in 0..outer {
                    let dst = o * ax * inner + start * inner;
                    let srcb = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[srcb..srcb + len * inner]);
                }
                parent.accumulate(&d);
            }),
        ))
    }

    /// Index along an axis and drop it.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        let sliced = self.slice(axis, index, 1)?;
        let mut shape = self.0.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        sliced.reshape(&shape)
    }

    // ── Linear algebra ─────────────────────────────────────────────

    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (&self.0.shape, &rhs.0.shape);
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(TrinityError::ShapeMismatch {
                op: "matmul",
                lhs: ls.clone(),
                rhs: rs.clone(),
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let a = self.0.data.borrow();
        let b = rhs.0.data.borrow();
        let data = matmul_raw(&a, &b, m, k, n);
        drop(a);
        drop(b);
        let pa = self.clone();
        let pb = rhs.clone();
        Ok(Tensor::op(
            data,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _| {
                let a = pa.data_ref();
                let b = pb.data_ref();
                // dA = G · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        darow[p] = s;
                    }
                }
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &a[i * k..(i + 1) * k];
                    for p in 0..k {
                        let av = arow[p];
                        if av == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            dbrow[j] += av * grow[j];
                        }
                    }
                }
                drop(a);
                drop(b);
                pa.accumulate(&da);
                pb.accumulate(&db);
            }),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

// ── Broadcasting machinery ─────────────────────────────────────────

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TrinityError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Flat index map from a broadcast output shape into a source shape.
fn broadcast_index_map(out_shape: &[usize], src_shape: &[usize]) -> Vec<usize> {
    let ndim = out_shape.len();
    let padded = pad_shape(src_shape, ndim);
    let src_strides = strides_for(&padded);
    let total = numel_of(out_shape);
    let mut map = Vec::with_capacity(total);
    let mut coords = vec![0usize; ndim];
    for _ in 0..total {
        let mut idx = 0;
        for d in 0..ndim {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            idx += c * src_strides[d];
        }
        map.push(idx);
        for d in (0..ndim).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    map
}

fn binary_broadcast(
    lhs: &Tensor,
    rhs: &Tensor,
    op: &'static str,
    fwd: impl Fn(f64, f64) -> f64,
    partials: impl Fn(f64, f64) -> (f64, f64) + 'static,
) -> Result<Tensor> {
    let out_shape = broadcast_shapes(&lhs.0.shape, &rhs.0.shape, op)?;
    let a = lhs.0.data.borrow();
    let b = rhs.0.data.borrow();
    let same = lhs.0.shape == rhs.0.shape;
    let (data, maps): (Vec<f64>, Option<(Vec<usize>, Vec<usize>)>) = if same {
        (a.iter().zip(b.iter()).map(|(x, y)| fwd(*x, *y)).collect(), None)
    } else {
        let ma = broadcast_index_map(&out_shape, &lhs.0.shape);
        let mb = broadcast_index_map(&out_shape, &rhs.0.shape);
        let d = ma
            .iter()
            .zip(&mb)
            .map(|(&ia, &ib)| fwd(a[ia], b[ib]))
            .collect();
        (d, Some((ma, mb)))
    };
    drop(a);
    drop(b);
    let pa = lhs.clone();
    let pb = rhs.clone();
    let na = lhs.numel();
    let nb = rhs.numel();
    Ok(Tensor::op(
        data,
        out_shape,
        vec![lhs.clone(), rhs.clone()],
        Box::new(move |g, _| {
            let a = pa.data_ref();
            let b = pb.data_ref();
            let mut da = vec![0.0; na];
            let mut db = vec![0.0; nb];
            match &maps {
                None => {
                    for i in 0..g.len() {
                        let (pa_, pb_) = partials(a[i], b[i]);
                        da[i] += g[i] * pa_;
                        db[i] += g[i] * pb_;
                    }
                }
                Some((ma, mb)) => {
                    for i in 0..g.len() {
                        let (ia, ib) = (ma[i], mb[i]);
                        let (pa_, pb_) = partials(a[ia], b[ib]);
                        da[ia] += g[i] * pa_;
                        db[ib] += g[i] * pb_;
                    }
                }
            }
            drop(a);
            drop(b);
            pa.accumulate(&da);
            pb.accumulate(&db);
        }),
    ))
}

/// Concatenate tensors along an axis.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(TrinityError::Contract("concat of zero tensors".into()));
    }
    let first = parts[0].shape().to_vec();
    if axis >= first.len() {
        return Err(TrinityError::Contract(format!(
            "concat axis {axis} out of bounds for shape {first:?}"
        )));
    }
    let mut axis_total = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != first.len()
            || s.iter()
                .enumerate()
                .any(|(d, &e)| d != axis && e != first[d])
        {
            return Err(TrinityError::ShapeMismatch {
                op: "concat",
                lhs: first.clone(),
                rhs: s.to_vec(),
            });
        }
        axis_total += s[axis];
    }
    let mut out_shape = first.clone();
    out_shape[axis] = axis_total;
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut data = vec![0.0; numel_of(&out_shape)];
    let mut offset = 0;
    let mut extents = Vec::with_capacity(parts.len());
    for p in parts {
        let ax = p.shape()[axis];
        let src = p.0.data.borrow();
        for o in 0..outer {
            let dst = o * axis_total * inner + offset * inner;
            let sb = o * ax * inner;
            data[dst..dst + ax * inner].copy_from_slice(&src[sb..sb + ax * inner]);
        }
        extents.push(ax);
        offset += ax;
    }
    let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    let owned_b = owned.clone();
    Ok(Tensor::op(
        data,
        out_shape,
        owned,
        Box::new(move |g, _| {
            let mut offset = 0;
            for (p, &ax) in owned_b.iter().zip(&extents) {
                let mut d = vec![0.0; p.numel()];
                for o in 0..outer {
                    let srcb = o * axis_total * inner + offset * inner;
                    let dst = o * ax * inner;
                    d[dst..dst + ax * inner].copy_from_slice(&g[srcb..srcb + ax * inner]);
                }
                p.accumulate(&d);
                offset += ax;
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_identity_returns_operand() {
        let eye = Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3])
            .unwrap();
        let a = Tensor::from_vec((1..=9).map(|v| v as f64 * 0.3).collect(), &[3, 3]).unwrap();
        let out = eye.matmul(&a).unwrap();
        for (x, y) in out.value().iter().zip(a.value().iter()) {
            assert_close(*x, *y, 1e-15);
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        let g = x.grad();
        assert_close(g[0], 2.0, 1e-12);
        assert_close(g[1], 4.0, 1e-12);
    }

    #[test]
    fn constant_loss_yields_zero_gradients() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul_scalar(0.0).sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let err = x.backward().unwrap_err();
        assert!(matches!(err, TrinityError::Contract(_)));
    }

    #[test]
    fn unreachable_leaf_reads_zero_grad() {
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = Tensor::param(vec![5.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert!(y.grad_opt().is_none());
        assert_eq!(y.grad(), vec![0.0]);
    }

    #[test]
    fn broadcasting_row_vector_add() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::param(vec![10.0, 20.0, 30.0], &[3]).unwrap();
        let out = a.add(&b).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.value(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let loss = out.sum_all();
        loss.backward().unwrap();
        assert_eq!(b.grad(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(TrinityError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn gelu_matches_erf_series_oracle() {
        // Independent oracle: erf via its Maclaurin series.
        fn erf_series(x: f64) -> f64 {
            let mut term = x;
            let mut sum = x;
            for n in 1..60 {
                let nf = n as f64;
                term *= -x * x / nf;
                sum += term / (2.0 * nf + 1.0);
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        }
        let expected = 1.0 * 0.5 * (1.0 + erf_series(1.0 / std::f64::consts::SQRT_2));
        let x = Tensor::from_vec(vec![1.0], &[1]).unwrap();
        assert_close(x.gelu().value()[0], expected, 1e-12);
    }

    #[test]
    fn no_grad_skips_graph() {
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(y.backward().is_ok());
        assert!(x.grad_opt().is_none());
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let a = Tensor::param(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::param(vec![3.0, 4.0], &[1, 2]).unwrap();
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        let back = c.slice(0, 1, 1).unwrap();
        let loss = back.sum_all();
        loss.backward().unwrap();
        assert_eq!(a.grad(), vec![0.0, 0.0]);
        assert_eq!(b.grad(), vec![1.0, 1.0]);
    }
}
