//! The tape: an append-only arena of graph nodes plus forward builders.
//!
//! All builders produce standard-layout owned arrays. Shape errors are
//! programming errors and panic with context; user-facing validation belongs
//! in the layers above.

use crate::exec;
use crate::op::Op;
use crate::scalar::Scalar;
use ndarray::{ArrayD, ArrayView2, Axis, IxDyn};
use std::cell::RefCell;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<F: Scalar> {
    pub value: ArrayD<F>,
    pub op: Op<F>,
    pub needs_grad: bool,
}

/// Gradients for the leaves of a tape, indexed by [`Var`].
pub struct Gradients<F: Scalar> {
    pub(crate) slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the backward root with respect to `v`, if it was reached.
    pub fn get(&self, v: Var) -> Option<&ArrayD<F>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<F>> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

pub struct Tape<F: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Owned copy of a node's forward value.
    pub fn value(&self, v: Var) -> ArrayD<F> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Forward value of a node that is a single number.
    pub fn scalar_value(&self, v: Var) -> F {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar_value on tensor of shape {:?}", val.shape());
        val.iter().next().copied().expect("non-empty")
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: ArrayD<F>, op: Op<F>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false, // set by `leaf`
            other => {
                let nodes = self.nodes.borrow();
                other.parents().iter().any(|p| nodes[p.0].needs_grad)
            }
        };
        self.push_with_grad(value, op, needs_grad)
    }

    fn push_with_grad(&self, value: ArrayD<F>, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert!(value.is_standard_layout());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    // -- inputs ------------------------------------------------------------

    /// Trainable input: gradients flow to it.
    pub fn leaf(&self, value: ArrayD<F>) -> Var {
        let value = to_standard(value);
        self.push_with_grad(value, Op::Leaf, true)
    }

    /// Non-trainable input (data, masks, positional constants).
    pub fn constant(&self, value: ArrayD<F>) -> Var {
        let value = to_standard(value);
        self.push_with_grad(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: F) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Copy of `v`'s value as a fresh constant: gradients stop here.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant(value)
    }

    // -- elementwise binary (numpy broadcasting) ----------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.broadcast_zip(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.broadcast_zip(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.broadcast_zip(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let value = self.broadcast_zip(a, b, |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    fn broadcast_zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F + Sync) -> ArrayD<F> {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let bv = &nodes[b.0].value;
        if av.shape() == bv.shape() {
            if let (Some(asl), Some(bsl)) = (av.as_slice(), bv.as_slice()) {
                let out = exec::zip_slices(asl, bsl, f);
                return ArrayD::from_shape_vec(av.raw_dim(), out).expect("same shape");
            }
        }
        let shape = broadcast_shape(av.shape(), bv.shape());
        let avb = av.broadcast(IxDyn(&shape)).unwrap_or_else(|| {
            panic!("cannot broadcast {:?} to {:?}", av.shape(), shape)
        });
        let bvb = bv.broadcast(IxDyn(&shape)).unwrap_or_else(|| {
            panic!("cannot broadcast {:?} to {:?}", bv.shape(), shape)
        });
        let mut out = ArrayD::zeros(IxDyn(&shape));
        ndarray::Zip::from(&mut out).and(&avb).and(&bvb).for_each(|o, &x, &y| *o = f(x, y));
        out
    }

    // -- elementwise unary ---------------------------------------------------

    fn unary(&self, x: Var, op: Op<F>, f: impl Fn(F) -> F + Sync) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let slice = xv.as_slice().expect("standard layout");
            ArrayD::from_shape_vec(xv.raw_dim(), exec::map_slice(slice, f)).expect("same shape")
        };
        self.push(value, op)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| F::one() / (F::one() + (-v).exp()))
    }

    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu_forward)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn add_scalar(&self, x: Var, s: F) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn mul_scalar(&self, x: Var, s: F) -> Var {
        self.unary(x, Op::MulScalar(x, s), |v| v * s)
    }

    pub fn clamp(&self, x: Var, lo: F, hi: F) -> Var {
        assert!(lo < hi, "clamp bounds out of order");
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            ArrayD::from_elem(IxDyn(&[]), nodes[x.0].value.sum())
        };
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert!(!xv.is_empty(), "mean of empty tensor");
            ArrayD::from_elem(IxDyn(&[]), xv.sum() / F::cast_usize(xv.len()))
        };
        self.push(value, Op::Mean(x))
    }

    pub fn sum_axes(&self, x: Var, axes: &[usize], keep: bool) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            reduce_axes(&nodes[x.0].value, axes, keep, false)
        };
        self.push(value, Op::SumAxes { x, axes: axes.to_vec(), keep })
    }

    pub fn mean_axes(&self, x: Var, axes: &[usize], keep: bool) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            reduce_axes(&nodes[x.0].value, axes, keep, true)
        };
        self.push(value, Op::MeanAxes { x, axes: axes.to_vec(), keep })
    }

    // -- linear algebra -------------------------------------------------------

    /// `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = as2(&nodes[a.0].value);
            let bv = as2(&nodes[b.0].value);
            exec::matmul(av, bv).into_dyn()
        };
        self.push(value, Op::Matmul(a, b))
    }

    /// `[b,m,k] @ [b,k,n] -> [b,m,n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            assert_eq!(av.ndim(), 3, "bmm lhs must be 3-d, got {:?}", av.shape());
            assert_eq!(bv.ndim(), 3, "bmm rhs must be 3-d, got {:?}", bv.shape());
            assert_eq!(av.shape()[0], bv.shape()[0], "bmm batch dims differ");
            let a_views: Vec<ArrayView2<F>> = av.outer_iter().map(|s| as2view(s)).collect();
            let b_views: Vec<ArrayView2<F>> = bv.outer_iter().map(|s| as2view(s)).collect();
            let parts = exec::bmm(&a_views, &b_views);
            let (m, n) = parts[0].dim();
            let mut out = ArrayD::zeros(IxDyn(&[parts.len(), m, n]));
            for (i, p) in parts.iter().enumerate() {
                out.index_axis_mut(Axis(0), i).assign(p);
            }
            out
        };
        self.push(value, Op::Bmm(a, b))
    }

    /// `x @ w (+ b)` over the last axis of `x`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let wv = as2(&nodes[w.0].value);
            let k = *xv.shape().last().expect("linear input has an axis");
            assert_eq!(k, wv.nrows(), "linear: input dim {k} vs weight rows {}", wv.nrows());
            let rows = xv.len() / k;
            let x2 = xv.view().into_shape_with_order((rows, k)).expect("standard layout");
            let mut out2 = exec::matmul(x2, wv);
            if let Some(b) = b {
                let bv = &nodes[b.0].value;
                assert_eq!(bv.len(), wv.ncols(), "linear bias length");
                let bs = bv.as_slice().expect("standard layout");
                for mut row in out2.rows_mut() {
                    for (o, &bb) in row.iter_mut().zip(bs) {
                        *o += bb;
                    }
                }
            }
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() = wv.ncols();
            out2.into_shape_with_order(IxDyn(&shape)).expect("row count preserved")
        };
        self.push(value, Op::Linear { x, w, b })
    }

    /// Row gather from `table: [v, d]`; output `[ids.len(), d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let tv = as2(&nodes[table.0].value);
            let d = tv.ncols();
            let mut out = ndarray::Array2::<F>::zeros((ids.len(), d));
            for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
                assert!(id < tv.nrows(), "embedding id {id} out of range {}", tv.nrows());
                row.assign(&tv.row(id));
            }
            out.into_dyn()
        };
        self.push(value, Op::Embedding { table, ids: ids.to_vec() })
    }

    // -- shape ops -------------------------------------------------------------

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert_eq!(
                xv.len(),
                shape.iter().product::<usize>(),
                "reshape {:?} -> {:?} changes element count",
                xv.shape(),
                shape
            );
            xv.clone().into_shape_with_order(IxDyn(shape)).expect("standard layout")
        };
        self.push(value, Op::Reshape(x))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert_eq!(perm.len(), xv.ndim(), "permute rank mismatch");
            let viewed = xv.view().permuted_axes(IxDyn(perm));
            viewed.as_standard_layout().to_owned()
        };
        self.push(value, Op::Permute { x, perm: perm.to_vec() })
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = xs.iter().map(|v| nodes[v.0].value.view()).collect();
            let out = ndarray::concatenate(Axis(axis), &views).expect("concat shapes agree");
            to_standard(out)
        };
        self.push(value, Op::Concat { xs: xs.to_vec(), axis })
    }

    pub fn slice_axis(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert!(
                start + len <= xv.shape()[axis],
                "slice {start}..{} beyond axis {axis} of {:?}",
                start + len,
                xv.shape()
            );
            let sl = xv.slice_axis(Axis(axis), ndarray::Slice::from(start..start + len));
            to_standard(sl.to_owned())
        };
        self.push(value, Op::SliceAxis { x, axis, start })
    }

    // -- fused nn ops ------------------------------------------------------------

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let cols = *xv.shape().last().expect("softmax input has an axis");
            let rows = xv.len() / cols;
            let out = exec::softmax_rows(xv.as_slice().expect("standard layout"), rows, cols);
            ArrayD::from_shape_vec(xv.raw_dim(), out).expect("same shape")
        };
        self.push(value, Op::SoftmaxLast(x))
    }

    /// Layer norm over the last axis with learned `gamma`/`beta` of shape `[d]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let (value, mean, inv_std) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let gv = &nodes[gamma.0].value;
            let bv = &nodes[beta.0].value;
            let cols = *xv.shape().last().expect("layer_norm input has an axis");
            assert_eq!(gv.len(), cols, "gamma length");
            assert_eq!(bv.len(), cols, "beta length");
            let rows = xv.len() / cols;
            let (y, mean, inv_std) = exec::layer_norm_rows(
                xv.as_slice().expect("standard layout"),
                rows,
                cols,
                gv.as_slice().expect("standard layout"),
                bv.as_slice().expect("standard layout"),
                eps,
            );
            (ArrayD::from_shape_vec(xv.raw_dim(), y).expect("same shape"), mean, inv_std)
        };
        self.push(value, Op::LayerNorm { x, gamma, beta, mean, inv_std })
    }

    /// NCHW convolution; `w: [o, c, kh, kw]`, `b: [o]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let wv = &nodes[w.0].value;
            assert_eq!(xv.ndim(), 4, "conv2d input must be NCHW, got {:?}", xv.shape());
            assert_eq!(wv.ndim(), 4, "conv2d weight must be [o,c,kh,kw]");
            let (bn, c, h, wdt) = dims4(xv.shape());
            let (o, wc, kh, kw) = dims4(wv.shape());
            assert_eq!(c, wc, "conv2d channels: input {c} vs weight {wc}");
            let (oh, ow) = crate::exec::conv_out_hw((h, wdt), (kh, kw), stride, pad);
            let cols = exec::im2col2d(
                xv.as_slice().expect("standard layout"),
                (bn, c, h, wdt),
                (kh, kw),
                stride,
                pad,
            );
            let w2 = wv.view().into_shape_with_order((o, c * kh * kw)).expect("standard layout");
            let mut out2 = exec::matmul(cols.view(), w2.t());
            if let Some(b) = b {
                let bv = &nodes[b.0].value;
                assert_eq!(bv.len(), o, "conv2d bias length");
                let bs = bv.as_slice().expect("standard layout");
                for mut row in out2.rows_mut() {
                    for (v, &bb) in row.iter_mut().zip(bs) {
                        *v += bb;
                    }
                }
            }
            // rows are ordered (b, oy, ox): reshape then move channels forward
            let out = out2.into_shape_with_order(IxDyn(&[bn, oh, ow, o])).expect("row order");
            to_standard(out.permuted_axes(IxDyn(&[0, 3, 1, 2])).to_owned())
        };
        self.push(value, Op::Conv2d { x, w, b, stride, pad })
    }

    /// NCDHW convolution; `w: [o, c, kt, kh, kw]`, `b: [o]`.
    pub fn conv3d(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let wv = &nodes[w.0].value;
            assert_eq!(xv.ndim(), 5, "conv3d input must be NCDHW, got {:?}", xv.shape());
            assert_eq!(wv.ndim(), 5, "conv3d weight must be [o,c,kt,kh,kw]");
            let s = xv.shape();
            let (bn, c, t, h, wdt) = (s[0], s[1], s[2], s[3], s[4]);
            let ws = wv.shape();
            let (o, wc, kt, kh, kw) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
            assert_eq!(c, wc, "conv3d channels: input {c} vs weight {wc}");
            let (ot, oh, ow) = crate::exec::conv_out_thw((t, h, wdt), (kt, kh, kw), stride, pad);
            let cols = exec::im2col3d(
                xv.as_slice().expect("standard layout"),
                (bn, c, t, h, wdt),
                (kt, kh, kw),
                stride,
                pad,
            );
            let w2 =
                wv.view().into_shape_with_order((o, c * kt * kh * kw)).expect("standard layout");
            let mut out2 = exec::matmul(cols.view(), w2.t());
            if let Some(b) = b {
                let bv = &nodes[b.0].value;
                assert_eq!(bv.len(), o, "conv3d bias length");
                let bs = bv.as_slice().expect("standard layout");
                for mut row in out2.rows_mut() {
                    for (v, &bb) in row.iter_mut().zip(bs) {
                        *v += bb;
                    }
                }
            }
            let out = out2.into_shape_with_order(IxDyn(&[bn, ot, oh, ow, o])).expect("row order");
            to_standard(out.permuted_axes(IxDyn(&[0, 4, 1, 2, 3])).to_owned())
        };
        self.push(value, Op::Conv3d { x, w, b, stride, pad })
    }

    /// Nearest-neighbour 2x upsampling of the last two axes.
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert!(xv.ndim() >= 2, "upsample needs at least 2 axes");
            let sh = xv.shape();
            let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            let r = xv.len() / (h * w);
            let xs = xv.as_slice().expect("standard layout");
            let mut out = vec![F::zero(); r * 4 * h * w];
            for ri in 0..r {
                let src = &xs[ri * h * w..(ri + 1) * h * w];
                let dst = &mut out[ri * 4 * h * w..(ri + 1) * 4 * h * w];
                for y in 0..2 * h {
                    let sy = y / 2;
                    for x2 in 0..2 * w {
                        dst[y * 2 * w + x2] = src[sy * w + x2 / 2];
                    }
                }
            }
            let mut shape = sh.to_vec();
            let n = shape.len();
            shape[n - 2] = 2 * h;
            shape[n - 1] = 2 * w;
            ArrayD::from_shape_vec(IxDyn(&shape), out).expect("doubled shape")
        };
        self.push(value, Op::UpsampleNearest2(x))
    }

    /// Mean cross-entropy over rows of `logits: [n, k]` against `targets`.
    pub fn cross_entropy_mean(&self, logits: Var, targets: &[usize]) -> Var {
        let (value, softmax) = {
            let nodes = self.nodes.borrow();
            let lv = as2(&nodes[logits.0].value);
            let (n, k) = lv.dim();
            assert_eq!(n, targets.len(), "cross_entropy row/target count mismatch");
            assert!(n > 0, "cross_entropy on empty batch");
            let ls = nodes[logits.0].value.as_slice().expect("standard layout");
            let soft = exec::softmax_rows(ls, n, k);
            let mut total = F::zero();
            for (r, &t) in targets.iter().enumerate() {
                assert!(t < k, "target class {t} out of range {k}");
                let row = &ls[r * k..(r + 1) * k];
                let mut m = F::neg_infinity();
                for &v in row {
                    if v > m {
                        m = v;
                    }
                }
                let mut lse = F::zero();
                for &v in row {
                    lse += (v - m).exp();
                }
                total += lse.ln() + m - row[t];
            }
            let loss = total / F::cast_usize(n);
            let soft = ArrayD::from_shape_vec(IxDyn(&[n, k]), soft).expect("same shape");
            (ArrayD::from_elem(IxDyn(&[]), loss), soft)
        };
        self.push(value, Op::CrossEntropyMean { logits, targets: targets.to_vec(), softmax })
    }
}

// -- helpers -------------------------------------------------------------------

pub(crate) fn gelu_forward<F: Scalar>(v: F) -> F {
    let c = F::cast(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::cast(0.044715);
    let half = F::cast(0.5);
    let u = c * (v + a * v * v * v);
    half * v * (F::one() + u.tanh())
}

pub(crate) fn to_standard<F: Scalar>(a: ArrayD<F>) -> ArrayD<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ad = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let bd = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ad == bd {
            ad
        } else if ad == 1 {
            bd
        } else if bd == 1 {
            ad
        } else {
            panic!("incompatible broadcast: {a:?} vs {b:?}")
        };
    }
    out
}

pub(crate) fn as2<F: Scalar>(a: &ArrayD<F>) -> ArrayView2<'_, F> {
    a.view().into_dimensionality().unwrap_or_else(|_| panic!("expected 2-d, got {:?}", a.shape()))
}

fn as2view<F: Scalar>(a: ndarray::ArrayViewD<'_, F>) -> ArrayView2<'_, F> {
    let shape = a.shape().to_vec();
    a.into_dimensionality().unwrap_or_else(|_| panic!("expected 2-d, got {shape:?}"))
}

fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

pub(crate) fn reduce_axes<F: Scalar>(
    x: &ArrayD<F>,
    axes: &[usize],
    keep: bool,
    mean: bool,
) -> ArrayD<F> {
    assert!(!axes.is_empty(), "reduce over no axes");
    let mut sorted: Vec<usize> = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), axes.len(), "duplicate reduce axes {axes:?}");
    let mut divisor = 1usize;
    for &ax in &sorted {
        assert!(ax < x.ndim(), "axis {ax} out of range for {:?}", x.shape());
        divisor *= x.shape()[ax];
    }
    let mut cur = x.clone();
    for &ax in sorted.iter().rev() {
        cur = cur.sum_axis(Axis(ax));
    }
    if keep {
        for &ax in &sorted {
            cur = cur.insert_axis(Axis(ax));
        }
    }
    if mean {
        cur = cur / F::cast_usize(divisor);
    }
    to_standard(cur)
}
