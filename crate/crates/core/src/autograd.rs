//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that depends on a
//! trainable leaf. Nodes that cannot reach a trainable leaf are skipped.
//!
//! Shape errors inside the engine are programmer errors and panic; public
//! model operations validate their inputs before building graph nodes.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};

pub type Tensor = ArrayD<f64>;
pub type Mask = ArrayD<bool>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    BatchMatMul { a: usize, b: usize, transpose_b: bool },
    Softmax(usize),
    LogSoftmax(usize),
    Gelu(usize),
    Normalize { x: usize, xhat: Tensor, inv_std: Vec<f64> },
    Concat { parts: Vec<usize>, widths: Vec<usize> },
    SliceLast { x: usize, start: usize },
    Reshape(usize),
    Permute { x: usize, axes: Vec<usize> },
    Embedding { table: usize, ids: Vec<usize> },
    GatherLast { x: usize, idx: Vec<usize> },
    MaxLast { x: usize, argmax: Vec<Option<usize>> },
    Expand { x: usize, axis: usize },
    WeightedSum { x: usize, weights: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation. Cheap to create; one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, usize>>,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradients of every named parameter that participated in the loss.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params.iter().filter_map(|(name, &id)| self.grads[id].clone().map(|g| (name.clone(), g))).collect()
    }
}

fn standard(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

fn as_matrix(t: &Tensor) -> ArrayView2<'_, f64> {
    let cols = *t.shape().last().expect("matrix view of a scalar");
    let rows = t.len().checked_div(cols).unwrap_or(0);
    t.view().into_shape_with_order((rows, cols)).expect("standard layout")
}

/// Reduces a broadcast gradient back to `shape`.
fn sum_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = g.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    standard(out)
}

fn split_batches(t: &Tensor) -> (usize, usize, usize) {
    let nd = t.ndim();
    assert!(nd >= 2, "batched matmul needs rank >= 2");
    let m = t.shape()[nd - 2];
    let k = t.shape()[nd - 1];
    let n = t.len().checked_div(m * k).unwrap_or(0);
    (n, m, k)
}

fn batch_view(t: &Tensor, i: usize, m: usize, k: usize) -> ArrayView2<'_, f64> {
    let flat = t.as_slice().expect("standard layout");
    ArrayView2::from_shape((m, k), &flat[i * m * k..(i + 1) * m * k]).unwrap()
}

fn bmm_forward(a: &Tensor, b: &Tensor, transpose_b: bool) -> Tensor {
    let (na, m, k) = split_batches(a);
    let (nb, r, c) = split_batches(b);
    assert_eq!(na, nb, "batched matmul: batch mismatch {:?} vs {:?}", a.shape(), b.shape());
    let (kb, n) = if transpose_b { (c, r) } else { (r, c) };
    assert_eq!(k, kb, "batched matmul: inner mismatch {:?} vs {:?}", a.shape(), b.shape());
    let mut out = Vec::with_capacity(na * m * n);
    for i in 0..na {
        let av = batch_view(a, i, m, k);
        let bv = batch_view(b, i, r, c);
        let y: Array2<f64> = if transpose_b { av.dot(&bv.t()) } else { av.dot(&bv) };
        out.extend(y.iter().copied());
    }
    let mut shape = a.shape().to_vec();
    let nd = shape.len();
    shape[nd - 1] = n;
    Tensor::from_shape_vec(IxDyn(&shape), out).unwrap()
}

fn lanes_mut(t: &mut Tensor) -> impl Iterator<Item = &mut [f64]> {
    let w = *t.shape().last().unwrap_or(&1);
    t.as_slice_mut().unwrap().chunks_mut(w.max(1))
}

fn softmax_lanes(x: &Tensor, mask: Option<&Mask>) -> Tensor {
    let mut y = x.clone();
    let w = *x.shape().last().unwrap();
    let mask_flat = mask.map(|m| m.as_slice().expect("standard mask"));
    for (lane_idx, lane) in lanes_mut(&mut y).enumerate() {
        let valid = |j: usize| mask_flat.is_none_or(|m| m[lane_idx * w + j]);
        let max = (0..w).filter(|&j| valid(j)).map(|j| lane[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            lane.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let mut sum = 0.0;
        for (j, v) in lane.iter_mut().enumerate() {
            if valid(j) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        lane.iter_mut().for_each(|v| *v /= sum);
    }
    y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: standard(value), op, needs_grad });
        Var { id: nodes.len() - 1, graph: self }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::from_elem(IxDyn(&[]), value))
    }

    /// A trainable leaf that is not tracked by name.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A named trainable leaf. Requesting the same name twice returns the same node.
    pub fn param(&self, name: &str, value: &Tensor) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { id, graph: self };
        }
        let v = self.leaf(value.clone());
        self.params.borrow_mut().insert(name.to_string(), v.id);
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.borrow().keys().cloned().collect()
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.raw_dim()));

        let accumulate = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(standard(g)),
            }
        };

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, sum_to_shape(&g, val(*a).shape()));
                    accumulate(&mut grads, *b, sum_to_shape(&g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, sum_to_shape(&g, val(*a).shape()));
                    accumulate(&mut grads, *b, -sum_to_shape(&g, val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if nodes[*a].needs_grad {
                        let ga = &g * val(*b);
                        accumulate(&mut grads, *a, sum_to_shape(&ga, val(*a).shape()));
                    }
                    if nodes[*b].needs_grad {
                        let gb = &g * val(*a);
                        accumulate(&mut grads, *b, sum_to_shape(&gb, val(*b).shape()));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::MatMul(a, w) => {
                    let g2 = as_matrix(&g);
                    if nodes[*a].needs_grad {
                        let w2 = val(*w).view().into_dimensionality::<ndarray::Ix2>().unwrap();
                        let ga = g2.dot(&w2.t());
                        let ga = standard(ga.into_dyn()).into_shape_with_order(IxDyn(val(*a).shape())).unwrap();
                        accumulate(&mut grads, *a, ga);
                    }
                    if nodes[*w].needs_grad {
                        let a2 = as_matrix(val(*a));
                        accumulate(&mut grads, *w, a2.t().dot(&g2).into_dyn());
                    }
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let av = val(*a);
                    let bv = val(*b);
                    let (n, m, k) = split_batches(av);
                    let (_, r, c) = split_batches(bv);
                    let gn = g.shape()[g.ndim() - 1];
                    let mut ga = Vec::with_capacity(av.len());
                    let mut gb = Vec::with_capacity(bv.len());
                    for i in 0..n {
                        let gi = batch_view(&g, i, m, gn);
                        let ai = batch_view(av, i, m, k);
                        let bi = batch_view(bv, i, r, c);
                        if *transpose_b {
                            // y = a b^T
                            ga.extend(gi.dot(&bi).iter().copied());
                            gb.extend(gi.t().dot(&ai).iter().copied());
                        } else {
                            ga.extend(gi.dot(&bi.t()).iter().copied());
                            gb.extend(ai.t().dot(&gi).iter().copied());
                        }
                    }
                    let ga = Tensor::from_shape_vec(av.raw_dim(), ga).unwrap();
                    let gb = Tensor::from_shape_vec(bv.raw_dim(), gb).unwrap();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = &g * y;
                    let w = *y.shape().last().unwrap();
                    let gflat = g.as_slice().unwrap();
                    let yflat = y.as_slice().unwrap();
                    for (lane_idx, lane) in lanes_mut(&mut gx).enumerate() {
                        let off = lane_idx * w;
                        let dot: f64 = (0..w).map(|j| gflat[off + j] * yflat[off + j]).sum();
                        for (j, v) in lane.iter_mut().enumerate() {
                            *v -= yflat[off + j] * dot;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let w = *y.shape().last().unwrap();
                    let mut gx = g.clone();
                    let gflat = g.as_slice().unwrap();
                    let yflat = y.as_slice().unwrap();
                    for (lane_idx, lane) in lanes_mut(&mut gx).enumerate() {
                        let off = lane_idx * w;
                        let gsum: f64 = gflat[off..off + w].iter().sum();
                        for (j, v) in lane.iter_mut().enumerate() {
                            *v -= yflat[off + j].exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(val(*x)).for_each(|gv, &xv| *gv *= gelu_grad(xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Normalize { x, xhat, inv_std } => {
                    let w = *xhat.shape().last().unwrap();
                    let mut gx = g.clone();
                    let gflat = g.as_slice().unwrap();
                    let hflat = xhat.as_slice().unwrap();
                    for (lane_idx, lane) in lanes_mut(&mut gx).enumerate() {
                        let off = lane_idx * w;
                        let gs = &gflat[off..off + w];
                        let hs = &hflat[off..off + w];
                        let mean_g = gs.iter().sum::<f64>() / w as f64;
                        let mean_gh = gs.iter().zip(hs).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for j in 0..w {
                            lane[j] = inv_std[lane_idx] * (gs[j] - mean_g - hs[j] * mean_gh);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { parts, widths } => {
                    let mut start = 0;
                    let last = g.ndim() - 1;
                    for (&p, &w) in parts.iter().zip(widths) {
                        let piece = g.slice_axis(Axis(last), (start..start + w).into()).to_owned();
                        accumulate(&mut grads, p, standard(piece));
                        start += w;
                    }
                }
                Op::SliceLast { x, start } => {
                    let xv = val(*x);
                    let last = xv.ndim() - 1;
                    let w = g.shape()[last];
                    let mut gx = Tensor::zeros(xv.raw_dim());
                    gx.slice_axis_mut(Axis(last), (*start..*start + w).into()).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let gx = g.into_shape_with_order(IxDyn(val(*x).shape())).unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Permute { x, axes } => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    accumulate(&mut grads, *x, standard(g.permuted_axes(IxDyn(&inverse))));
                }
                Op::Embedding { table, ids } => {
                    let tv = val(*table);
                    let d = tv.shape()[1];
                    let mut gt = Tensor::zeros(tv.raw_dim());
                    let gflat = g.as_slice().unwrap();
                    let tflat = gt.as_slice_mut().unwrap();
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            tflat[id * d + j] += gflat[row * d + j];
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::GatherLast { x, idx } => {
                    let xv = val(*x);
                    let w = *xv.shape().last().unwrap();
                    let mut gx = Tensor::zeros(xv.raw_dim());
                    let gflat = g.as_slice().unwrap();
                    let flat = gx.as_slice_mut().unwrap();
                    for (lane, &j) in idx.iter().enumerate() {
                        flat[lane * w + j] += gflat[lane];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxLast { x, argmax } => {
                    let xv = val(*x);
                    let w = *xv.shape().last().unwrap();
                    let mut gx = Tensor::zeros(xv.raw_dim());
                    let gflat = g.as_slice().unwrap();
                    let flat = gx.as_slice_mut().unwrap();
                    for (lane, j) in argmax.iter().enumerate() {
                        if let Some(j) = j {
                            flat[lane * w + j] += gflat[lane];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Expand { x, axis } => {
                    accumulate(&mut grads, *x, g.sum_axis(Axis(*axis)));
                }
                Op::WeightedSum { x, weights } => {
                    let s = *g.first().unwrap();
                    accumulate(&mut grads, *x, weights * s);
                }
            }
        }

        Gradients { grads, params: self.params.borrow().clone() }
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_ref(self.id).clone()
    }

    pub fn value_ref(&self) -> Ref<'g, Tensor> {
        self.graph.value_ref(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_ref(self.id).shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        let v = self.graph.value_ref(self.id);
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        *v.first().unwrap()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, op, needs)
    }

    fn binary(&self, other: Var<'g>, value: Tensor, op: Op) -> Var<'g> {
        let needs = self.graph.needs(&[self.id, other.id]);
        self.graph.push(value, op, needs)
    }

    pub fn add(&self, other: Var<'g>) -> Var<'g> {
        let v = &*self.value_ref() + &*other.value_ref();
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'g>) -> Var<'g> {
        let v = &*self.value_ref() - &*other.value_ref();
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'g>) -> Var<'g> {
        let v = &*self.value_ref() * &*other.value_ref();
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        let v = &*self.value_ref() * c;
        self.unary(v, Op::Scale(self.id, c))
    }

    /// `[..., k] x [k, n] -> [..., n]`.
    pub fn matmul(&self, w: Var<'g>) -> Var<'g> {
        let v = {
            let a = self.value_ref();
            let wv = w.value_ref();
            assert_eq!(wv.ndim(), 2, "matmul weight must be rank 2");
            assert_eq!(
                a.shape().last(),
                Some(&wv.shape()[0]),
                "matmul inner mismatch {:?} x {:?}",
                a.shape(),
                wv.shape()
            );
            let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let y = as_matrix(&a).dot(&w2);
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = wv.shape()[1];
            y.into_shape_with_order(IxDyn(&shape)).unwrap()
        };
        self.binary(w, v, Op::MatMul(self.id, w.id))
    }

    /// Batched matrix product over matching leading axes; `transpose_b` multiplies by `b^T`.
    pub fn bmm(&self, b: Var<'g>, transpose_b: bool) -> Var<'g> {
        let v = bmm_forward(&self.value_ref(), &b.value_ref(), transpose_b);
        self.binary(b, v, Op::BatchMatMul { a: self.id, b: b.id, transpose_b })
    }

    /// Softmax over the last axis. Masked-out entries (`false`) get probability 0;
    /// a lane with no valid entry is all zeros.
    pub fn softmax(&self, mask: Option<&Mask>) -> Var<'g> {
        if let Some(m) = mask {
            assert_eq!(m.shape(), self.shape().as_slice(), "softmax mask shape");
        }
        let mask = mask.map(|m| standard_mask(m.clone()));
        let v = softmax_lanes(&self.value_ref(), mask.as_ref());
        self.unary(v, Op::Softmax(self.id))
    }

    pub fn log_softmax(&self) -> Var<'g> {
        let mut y = self.value();
        for lane in lanes_mut(&mut y) {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lane.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lane.iter_mut().for_each(|v| *v -= lse);
        }
        self.unary(y, Op::LogSoftmax(self.id))
    }

    pub fn gelu(&self) -> Var<'g> {
        let v = self.value_ref().mapv(gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    /// Zero-mean, unit-variance normalisation over the last axis.
    pub fn normalize(&self, eps: f64) -> Var<'g> {
        let mut xhat = self.value();
        let w = *xhat.shape().last().unwrap();
        let mut inv_std = Vec::with_capacity(xhat.len() / w.max(1));
        for lane in lanes_mut(&mut xhat) {
            let mean = lane.iter().sum::<f64>() / w as f64;
            let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            lane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.unary(xhat.clone(), Op::Normalize { x: self.id, xhat, inv_std })
    }

    pub fn slice_last(&self, start: usize, end: usize) -> Var<'g> {
        let v = {
            let x = self.value_ref();
            let last = x.ndim() - 1;
            x.slice_axis(Axis(last), (start..end).into()).to_owned()
        };
        self.unary(v, Op::SliceLast { x: self.id, start })
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let v = self.value().into_shape_with_order(IxDyn(shape)).expect("reshape size mismatch");
        self.unary(v, Op::Reshape(self.id))
    }

    pub fn permute(&self, axes: &[usize]) -> Var<'g> {
        let v = self.value().permuted_axes(IxDyn(axes));
        self.unary(v, Op::Permute { x: self.id, axes: axes.to_vec() })
    }

    /// Row lookup into a `[V, d]` table; output shape is `ids_shape + [d]`.
    pub fn embedding(&self, ids: &[usize], ids_shape: &[usize]) -> Var<'g> {
        let v = {
            let t = self.value_ref();
            let d = t.shape()[1];
            let flat = t.as_slice().unwrap();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                assert!(id < t.shape()[0], "embedding id {id} out of range");
                out.extend_from_slice(&flat[id * d..(id + 1) * d]);
            }
            let mut shape = ids_shape.to_vec();
            shape.push(d);
            Tensor::from_shape_vec(IxDyn(&shape), out).unwrap()
        };
        self.unary(v, Op::Embedding { table: self.id, ids: ids.to_vec() })
    }

    /// Picks one entry per lane of the last axis.
    pub fn gather_last(&self, idx: &[usize]) -> Var<'g> {
        let v = {
            let x = self.value_ref();
            let w = *x.shape().last().unwrap();
            let flat = x.as_slice().unwrap();
            assert_eq!(idx.len() * w, x.len(), "gather index count");
            let out: Vec<f64> = idx.iter().enumerate().map(|(l, &j)| flat[l * w + j]).collect();
            let shape = &x.shape()[..x.ndim() - 1];
            Tensor::from_shape_vec(IxDyn(shape), out).unwrap()
        };
        self.unary(v, Op::GatherLast { x: self.id, idx: idx.to_vec() })
    }

    /// Maximum over the last axis restricted to unmasked entries (0 for empty lanes).
    pub fn max_last(&self, mask: Option<&Mask>) -> Var<'g> {
        let (v, argmax) = {
            let x = self.value_ref();
            let w = *x.shape().last().unwrap();
            let flat = x.as_slice().unwrap();
            let mask = mask.map(|m| standard_mask(m.clone()));
            let mflat = mask.as_ref().map(|m| m.as_slice().unwrap().to_vec());
            let lanes = x.len() / w.max(1);
            let mut out = Vec::with_capacity(lanes);
            let mut argmax = Vec::with_capacity(lanes);
            for l in 0..lanes {
                let mut best: Option<usize> = None;
                for j in 0..w {
                    if mflat.as_ref().is_some_and(|m| !m[l * w + j]) {
                        continue;
                    }
                    if best.is_none_or(|b| flat[l * w + j] > flat[l * w + b]) {
                        best = Some(j);
                    }
                }
                out.push(best.map_or(0.0, |b| flat[l * w + b]));
                argmax.push(best);
            }
            let shape = &x.shape()[..x.ndim() - 1];
            (Tensor::from_shape_vec(IxDyn(shape), out).unwrap(), argmax)
        };
        self.unary(v, Op::MaxLast { x: self.id, argmax })
    }

    /// Inserts a new axis at `axis` and repeats the value `n` times along it.
    pub fn expand(&self, axis: usize, n: usize) -> Var<'g> {
        let v = {
            let x = self.value_ref();
            let mut shape = x.shape().to_vec();
            shape.insert(axis, n);
            x.view().insert_axis(Axis(axis)).broadcast(IxDyn(&shape)).unwrap().to_owned()
        };
        self.unary(v, Op::Expand { x: self.id, axis })
    }

    /// `sum(x * weights)` as a scalar; `weights` is constant.
    pub fn weighted_sum(&self, weights: &Tensor) -> Var<'g> {
        let v = {
            let x = self.value_ref();
            assert_eq!(x.shape(), weights.shape(), "weighted_sum shape");
            Tensor::from_elem(IxDyn(&[]), (&*x * weights).sum())
        };
        self.unary(v, Op::WeightedSum { x: self.id, weights: standard(weights.clone()) })
    }
}

fn standard_mask(m: Mask) -> Mask {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

/// Concatenates along the last axis.
pub fn concat_last<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "concat of nothing");
    let graph = parts[0].graph;
    let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let last = values[0].ndim() - 1;
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let v = ndarray::concatenate(Axis(last), &views).expect("concat shape mismatch");
    let widths = values.iter().map(|v| v.shape()[last]).collect();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs = graph.needs(&ids);
    graph.push(v, Op::Concat { parts: ids, widths }, needs)
}
