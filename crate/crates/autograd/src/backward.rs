//! Reverse pass: walk the arena from the loss back to the leaves.
//!
//! Gradients for interior nodes are dropped as soon as they have been routed
//! to parents; only leaf gradients survive in the returned [`Gradients`].

use crate::exec;
use crate::op::Op;
use crate::scalar::Scalar;
use crate::tape::{as2, broadcast_shape, Gradients, Node, Tape, Var};
use ndarray::{ArrayD, ArrayView2, Axis, IxDyn};

impl<F: Scalar> Tape<F> {
    /// Backpropagate from a scalar `root`. Returns per-leaf gradients; leaves
    /// that the root does not depend on have no entry.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.0].value.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            nodes[root.0].value.shape()
        );
        let mut slots: Vec<Option<ArrayD<F>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.0].needs_grad {
            return Gradients { slots };
        }
        slots[root.0] = Some(ArrayD::from_elem(nodes[root.0].value.raw_dim(), F::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = slots[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => slots[i] = Some(g), // keep for the caller
                op => distribute(i, op, &g, &nodes, &mut slots),
            }
        }
        Gradients { slots }
    }
}

fn accum<F: Scalar>(
    slots: &mut [Option<ArrayD<F>>],
    nodes: &[Node<F>],
    v: Var,
    delta: ArrayD<F>,
) {
    if !nodes[v.0].needs_grad {
        return;
    }
    debug_assert_eq!(delta.shape(), nodes[v.0].value.shape(), "gradient shape mismatch");
    match &mut slots[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

fn needs<F: Scalar>(nodes: &[Node<F>], v: Var) -> bool {
    nodes[v.0].needs_grad
}

/// Sum a broadcast-shaped gradient back down to `target` shape.
fn reduce_to<F: Scalar>(g: &ArrayD<F>, target: &[usize]) -> ArrayD<F> {
    if g.shape() == target {
        return g.clone();
    }
    let mut cur = g.clone();
    while cur.ndim() > target.len() {
        cur = cur.sum_axis(Axis(0));
    }
    for (i, &t) in target.iter().enumerate() {
        if t == 1 && cur.shape()[i] != 1 {
            cur = cur.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    crate::tape::to_standard(cur)
}

/// Elementwise combine with broadcasting, used to form products like
/// `g * other` where `other` may be a smaller operand.
fn bzip<F: Scalar>(a: &ArrayD<F>, b: &ArrayD<F>, f: impl Fn(F, F) -> F) -> ArrayD<F> {
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcastable");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcastable");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    ndarray::Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

fn unary_grad<F: Scalar>(g: &ArrayD<F>, src: &ArrayD<F>, f: impl Fn(F) -> F) -> ArrayD<F> {
    let mut out = g.clone();
    ndarray::Zip::from(&mut out).and(src).for_each(|o, &s| *o = *o * f(s));
    out
}

#[allow(clippy::too_many_lines)]
fn distribute<F: Scalar>(
    node_idx: usize,
    op: &Op<F>,
    g: &ArrayD<F>,
    nodes: &[Node<F>],
    slots: &mut [Option<ArrayD<F>>],
) {
    let value = |v: Var| &nodes[v.0].value;
    let own = &nodes[node_idx].value;
    match op {
        Op::Leaf => unreachable!("leaves keep their gradient"),

        Op::Add(a, b) => {
            accum(slots, nodes, *a, reduce_to(g, value(*a).shape()));
            accum(slots, nodes, *b, reduce_to(g, value(*b).shape()));
        }
        Op::Sub(a, b) => {
            accum(slots, nodes, *a, reduce_to(g, value(*a).shape()));
            accum(slots, nodes, *b, reduce_to(&g.mapv(|v| -v), value(*b).shape()));
        }
        Op::Mul(a, b) => {
            if needs(nodes, *a) {
                accum(slots, nodes, *a, reduce_to(&bzip(g, value(*b), |x, y| x * y), value(*a).shape()));
            }
            if needs(nodes, *b) {
                accum(slots, nodes, *b, reduce_to(&bzip(g, value(*a), |x, y| x * y), value(*b).shape()));
            }
        }
        Op::Div(a, b) => {
            if needs(nodes, *a) {
                accum(slots, nodes, *a, reduce_to(&bzip(g, value(*b), |x, y| x / y), value(*a).shape()));
            }
            if needs(nodes, *b) {
                let ga = bzip(g, value(*a), |x, y| x * y);
                let gb = bzip(&ga, value(*b), |x, y| -x / (y * y));
                accum(slots, nodes, *b, reduce_to(&gb, value(*b).shape()));
            }
        }

        Op::Neg(x) => accum(slots, nodes, *x, g.mapv(|v| -v)),
        Op::Exp(x) => accum(slots, nodes, *x, unary_grad(g, own, |y| y)),
        Op::Ln(x) => accum(slots, nodes, *x, unary_grad(g, value(*x), |v| F::one() / v)),
        Op::Sqrt(x) => {
            let half = F::cast(0.5);
            accum(slots, nodes, *x, unary_grad(g, own, |y| half / y));
        }
        Op::Tanh(x) => accum(slots, nodes, *x, unary_grad(g, own, |y| F::one() - y * y)),
        Op::Sigmoid(x) => accum(slots, nodes, *x, unary_grad(g, own, |y| y * (F::one() - y))),
        Op::Gelu(x) => accum(slots, nodes, *x, unary_grad(g, value(*x), gelu_grad)),
        Op::Square(x) => {
            let two = F::cast(2.0);
            accum(slots, nodes, *x, unary_grad(g, value(*x), |v| two * v));
        }
        Op::AddScalar(x) => accum(slots, nodes, *x, g.clone()),
        Op::MulScalar(x, s) => accum(slots, nodes, *x, g.mapv(|v| v * *s)),
        Op::Clamp { x, lo, hi } => {
            let mask = unary_grad(g, value(*x), |v| {
                if v > *lo && v < *hi {
                    F::one()
                } else {
                    F::zero()
                }
            });
            accum(slots, nodes, *x, mask);
        }

        Op::Sum(x) => {
            let gv = g.iter().next().copied().expect("scalar grad");
            accum(slots, nodes, *x, ArrayD::from_elem(value(*x).raw_dim(), gv));
        }
        Op::Mean(x) => {
            let gv = g.iter().next().copied().expect("scalar grad");
            let n = F::cast_usize(value(*x).len());
            accum(slots, nodes, *x, ArrayD::from_elem(value(*x).raw_dim(), gv / n));
        }
        Op::SumAxes { x, axes, keep } | Op::MeanAxes { x, axes, keep } => {
            let xshape = value(*x).shape().to_vec();
            let mut gx = g.clone();
            if !*keep {
                let mut sorted = axes.clone();
                sorted.sort_unstable();
                for &ax in &sorted {
                    gx = gx.insert_axis(Axis(ax));
                }
            }
            let mut gx = gx
                .broadcast(IxDyn(&xshape))
                .expect("reduced grad broadcasts to input shape")
                .to_owned();
            if matches!(op, Op::MeanAxes { .. }) {
                let divisor: usize = axes.iter().map(|&ax| xshape[ax]).product();
                gx = gx / F::cast_usize(divisor);
            }
            accum(slots, nodes, *x, crate::tape::to_standard(gx));
        }

        Op::Matmul(a, b) => {
            let g2 = as2(g);
            if needs(nodes, *a) {
                let da = exec::matmul(g2, as2(value(*b)).t());
                accum(slots, nodes, *a, da.into_dyn());
            }
            if needs(nodes, *b) {
                let db = exec::matmul(as2(value(*a)).t(), g2);
                accum(slots, nodes, *b, db.into_dyn());
            }
        }
        Op::Bmm(a, b) => {
            let gb: Vec<ArrayView2<F>> =
                g.outer_iter().map(|s| s.into_dimensionality().expect("2-d")).collect();
            if needs(nodes, *a) {
                let bt: Vec<ArrayView2<F>> = value(*b)
                    .outer_iter()
                    .map(|s| s.into_dimensionality::<ndarray::Ix2>().expect("2-d").reversed_axes())
                    .collect();
                let parts = exec::bmm(&gb, &bt);
                accum(slots, nodes, *a, stack3(&parts));
            }
            if needs(nodes, *b) {
                let at: Vec<ArrayView2<F>> = value(*a)
                    .outer_iter()
                    .map(|s| s.into_dimensionality::<ndarray::Ix2>().expect("2-d").reversed_axes())
                    .collect();
                let parts = exec::bmm(&at, &gb);
                accum(slots, nodes, *b, stack3(&parts));
            }
        }
        Op::Linear { x, w, b } => {
            let xv = value(*x);
            let k = *xv.shape().last().expect("linear input");
            let rows = xv.len() / k;
            let n = value(*w).shape()[1];
            let x2 = xv.view().into_shape_with_order((rows, k)).expect("standard layout");
            let g2 = g.view().into_shape_with_order((rows, n)).expect("standard layout");
            if needs(nodes, *x) {
                let dx = exec::matmul(g2, as2(value(*w)).t());
                accum(
                    slots,
                    nodes,
                    *x,
                    dx.into_shape_with_order(IxDyn(xv.shape())).expect("same count"),
                );
            }
            if needs(nodes, *w) {
                let dw = exec::matmul(x2.t(), g2);
                accum(slots, nodes, *w, dw.into_dyn());
            }
            if let Some(bv) = b {
                if needs(nodes, *bv) {
                    accum(slots, nodes, *bv, g2.sum_axis(Axis(0)).into_dyn());
                }
            }
        }
        Op::Embedding { table, ids } => {
            if needs(nodes, *table) {
                let tshape = value(*table).shape();
                let d = tshape[1];
                let mut dt = ndarray::Array2::<F>::zeros((tshape[0], d));
                let g2 = g.view().into_shape_with_order((ids.len(), d)).expect("gather shape");
                for (row, &id) in ids.iter().enumerate() {
                    let mut dst = dt.row_mut(id);
                    dst += &g2.row(row);
                }
                accum(slots, nodes, *table, dt.into_dyn());
            }
        }

        Op::Reshape(x) => {
            let gx = g
                .clone()
                .into_shape_with_order(IxDyn(value(*x).shape()))
                .expect("same element count");
            accum(slots, nodes, *x, gx);
        }
        Op::Permute { x, perm } => {
            let mut inv = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let gx = g.view().permuted_axes(IxDyn(&inv)).as_standard_layout().to_owned();
            accum(slots, nodes, *x, gx);
        }
        Op::Concat { xs, axis } => {
            let mut start = 0usize;
            for part in xs {
                let len = value(*part).shape()[*axis];
                let gx = g
                    .slice_axis(Axis(*axis), ndarray::Slice::from(start..start + len))
                    .to_owned();
                accum(slots, nodes, *part, crate::tape::to_standard(gx));
                start += len;
            }
        }
        Op::SliceAxis { x, axis, start } => {
            let mut gx = ArrayD::zeros(value(*x).raw_dim());
            let len = own.shape()[*axis];
            gx.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..*start + len))
                .assign(g);
            accum(slots, nodes, *x, gx);
        }

        Op::SoftmaxLast(x) => {
            let cols = *own.shape().last().expect("softmax shape");
            let rows = own.len() / cols;
            let y = own.as_slice().expect("standard layout");
            let gs = g.as_slice().expect("standard layout");
            let mut dx = vec![F::zero(); rows * cols];
            for r in 0..rows {
                let yr = &y[r * cols..(r + 1) * cols];
                let gr = &gs[r * cols..(r + 1) * cols];
                let mut dot = F::zero();
                for i in 0..cols {
                    dot += yr[i] * gr[i];
                }
                let dr = &mut dx[r * cols..(r + 1) * cols];
                for i in 0..cols {
                    dr[i] = yr[i] * (gr[i] - dot);
                }
            }
            accum(
                slots,
                nodes,
                *x,
                ArrayD::from_shape_vec(own.raw_dim(), dx).expect("same shape"),
            );
        }
        Op::LayerNorm { x, gamma, beta, mean, inv_std } => {
            let xv = value(*x);
            let cols = *xv.shape().last().expect("layer_norm shape");
            let rows = xv.len() / cols;
            let xs = xv.as_slice().expect("standard layout");
            let gs = g.as_slice().expect("standard layout");
            let gammas = value(*gamma).as_slice().expect("standard layout");
            let inv_cols = F::one() / F::cast_usize(cols);
            let mut dx = vec![F::zero(); rows * cols];
            let mut dgamma = vec![F::zero(); cols];
            let mut dbeta = vec![F::zero(); cols];
            for r in 0..rows {
                let xr = &xs[r * cols..(r + 1) * cols];
                let gr = &gs[r * cols..(r + 1) * cols];
                let m = mean[r];
                let istd = inv_std[r];
                // two reductions shared by every element of the row
                let mut sum_dxhat = F::zero();
                let mut sum_dxhat_xhat = F::zero();
                for i in 0..cols {
                    let xhat = (xr[i] - m) * istd;
                    let dxhat = gr[i] * gammas[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    dgamma[i] += gr[i] * xhat;
                    dbeta[i] += gr[i];
                }
                let dr = &mut dx[r * cols..(r + 1) * cols];
                for i in 0..cols {
                    let xhat = (xr[i] - m) * istd;
                    let dxhat = gr[i] * gammas[i];
                    dr[i] = istd
                        * (dxhat - inv_cols * sum_dxhat - xhat * inv_cols * sum_dxhat_xhat);
                }
            }
            accum(
                slots,
                nodes,
                *x,
                ArrayD::from_shape_vec(xv.raw_dim(), dx).expect("same shape"),
            );
            accum(
                slots,
                nodes,
                *gamma,
                ArrayD::from_shape_vec(IxDyn(&[cols]), dgamma).expect("gamma shape"),
            );
            accum(
                slots,
                nodes,
                *beta,
                ArrayD::from_shape_vec(IxDyn(&[cols]), dbeta).expect("beta shape"),
            );
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let xv = value(*x);
            let wv = value(*w);
            let (bn, c, h, wd) = {
                let s = xv.shape();
                (s[0], s[1], s[2], s[3])
            };
            let (o, _, kh, kw) = {
                let s = wv.shape();
                (s[0], s[1], s[2], s[3])
            };
            // g: [b, o, oh, ow] -> rows ordered like the im2col output
            let g2 = crate::tape::to_standard(
                g.view().permuted_axes(IxDyn(&[0, 2, 3, 1])).to_owned(),
            );
            let rows = g2.len() / o;
            let g2 = g2.into_shape_with_order((rows, o)).expect("row count");
            let w2 = wv.view().into_shape_with_order((o, c * kh * kw)).expect("standard layout");
            if needs(nodes, *w) {
                let cols = exec::im2col2d(
                    xv.as_slice().expect("standard layout"),
                    (bn, c, h, wd),
                    (kh, kw),
                    *stride,
                    *pad,
                );
                let dw2 = exec::matmul(g2.view().reversed_axes(), cols.view());
                accum(
                    slots,
                    nodes,
                    *w,
                    dw2.into_shape_with_order(IxDyn(wv.shape())).expect("weight shape"),
                );
            }
            if needs(nodes, *x) {
                let dcols = exec::matmul(g2.view(), w2);
                let dx = exec::col2im2d(&dcols, (bn, c, h, wd), (kh, kw), *stride, *pad);
                accum(
                    slots,
                    nodes,
                    *x,
                    ArrayD::from_shape_vec(xv.raw_dim(), dx).expect("input shape"),
                );
            }
            if let Some(bv) = b {
                if needs(nodes, *bv) {
                    accum(slots, nodes, *bv, g2.sum_axis(Axis(0)).into_dyn());
                }
            }
        }
        Op::Conv3d { x, w, b, stride, pad } => {
            let xv = value(*x);
            let wv = value(*w);
            let (bn, c, t, h, wd) = {
                let s = xv.shape();
                (s[0], s[1], s[2], s[3], s[4])
            };
            let (o, _, kt, kh, kw) = {
                let s = wv.shape();
                (s[0], s[1], s[2], s[3], s[4])
            };
            let g2 = crate::tape::to_standard(
                g.view().permuted_axes(IxDyn(&[0, 2, 3, 4, 1])).to_owned(),
            );
            let rows = g2.len() / o;
            let g2 = g2.into_shape_with_order((rows, o)).expect("row count");
            let w2 = wv
                .view()
                .into_shape_with_order((o, c * kt * kh * kw))
                .expect("standard layout");
            if needs(nodes, *w) {
                let cols = exec::im2col3d(
                    xv.as_slice().expect("standard layout"),
                    (bn, c, t, h, wd),
                    (kt, kh, kw),
                    *stride,
                    *pad,
                );
                let dw2 = exec::matmul(g2.view().reversed_axes(), cols.view());
                accum(
                    slots,
                    nodes,
                    *w,
                    dw2.into_shape_with_order(IxDyn(wv.shape())).expect("weight shape"),
                );
            }
            if needs(nodes, *x) {
                let dcols = exec::matmul(g2.view(), w2);
                let dx = exec::col2im3d(&dcols, (bn, c, t, h, wd), (kt, kh, kw), *stride, *pad);
                accum(
                    slots,
                    nodes,
                    *x,
                    ArrayD::from_shape_vec(xv.raw_dim(), dx).expect("input shape"),
                );
            }
            if let Some(bv) = b {
                if needs(nodes, *bv) {
                    accum(slots, nodes, *bv, g2.sum_axis(Axis(0)).into_dyn());
                }
            }
        }
        Op::UpsampleNearest2(x) => {
            let xv = value(*x);
            let sh = xv.shape();
            let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            let r = xv.len() / (h * w);
            let gs = g.as_slice().expect("standard layout");
            let mut dx = vec![F::zero(); xv.len()];
            for ri in 0..r {
                let src = &gs[ri * 4 * h * w..(ri + 1) * 4 * h * w];
                let dst = &mut dx[ri * h * w..(ri + 1) * h * w];
                for y in 0..2 * h {
                    for x2 in 0..2 * w {
                        dst[(y / 2) * w + x2 / 2] += src[y * 2 * w + x2];
                    }
                }
            }
            accum(
                slots,
                nodes,
                *x,
                ArrayD::from_shape_vec(xv.raw_dim(), dx).expect("input shape"),
            );
        }
        Op::CrossEntropyMean { logits, targets, softmax } => {
            if needs(nodes, *logits) {
                let gv = g.iter().next().copied().expect("scalar grad");
                let n = targets.len();
                let scale = gv / F::cast_usize(n);
                let mut dl = softmax.clone();
                {
                    let d2 = dl.as_slice_mut().expect("standard layout");
                    let k = softmax.shape()[1];
                    for (r, &t) in targets.iter().enumerate() {
                        d2[r * k + t] -= F::one();
                    }
                    for v in d2.iter_mut() {
                        *v = *v * scale;
                    }
                }
                accum(slots, nodes, *logits, dl);
            }
        }
    }
}

fn stack3<F: Scalar>(parts: &[ndarray::Array2<F>]) -> ArrayD<F> {
    let (m, n) = parts[0].dim();
    let mut out = ArrayD::zeros(IxDyn(&[parts.len(), m, n]));
    for (i, p) in parts.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(p);
    }
    out
}

fn gelu_grad<F: Scalar>(v: F) -> F {
    let c = F::cast(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::cast(0.044715);
    let half = F::cast(0.5);
    let three = F::cast(3.0);
    let u = c * (v + a * v * v * v);
    let t = u.tanh();
    let du = c * (F::one() + three * a * v * v);
    half * (F::one() + t) + half * v * (F::one() - t * t) * du
}
