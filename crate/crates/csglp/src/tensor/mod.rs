//! Minimal reverse-mode autodiff over `ndarray`, specialized for the small
//! f64 networks used in this crate.
//!
//! The design is define-by-run: every op is evaluated eagerly when it is
//! added to the [`Graph`], so a [`Var`] always has a concrete value.
//! [`Graph::grad`] walks the graph backwards and *emits new ops* for each
//! backward rule, which means the returned gradients are themselves
//! differentiable — gradients of gradients (as required by a gradient
//! penalty) come for free, as long as every backward rule only uses ops
//! from this module's closed set.
//!
//! Scalars are arrays of shape `[1]`.

pub mod kernels;

use std::rc::Rc;

use ndarray::{ArrayD, ArrayViewD, Ix2, Ix4, IxDyn};

use kernels::{conv2d, conv2d_back_input, conv2d_back_weight, conv_out_len};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    SumAll(Var),
    BroadcastAll(Var),
    SumPerSample(Var),
    BroadcastPerSample(Var),
    SumSpatial(Var),
    BroadcastSpatial(Var),
    SumAxis0(Var),
    BroadcastAxis0(Var),
    SumToChan(Var),
    BroadcastChan(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddBias2d(Var, Var),
    AddBiasChan(Var, Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvBackInput { gy: Var, w: Var, stride: usize, pad: usize },
    ConvBackWeight { x: Var, gy: Var, stride: usize, pad: usize },
    ConcatChan(Var, Var),
    SliceChan { x: Var, start: usize, len: usize },
    PadChan { x: Var, before: usize, after: usize },
    Gather { x: Var, idx: Rc<Vec<usize>> },
    Scatter { x: Var, idx: Rc<Vec<usize>> },
    Reshape(Var),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Computation tape. Build one per training step and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        // flat-slice ops (gather, sum_per_sample, ...) rely on C layout
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayViewD<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a scalar (shape `[1]`) var.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar() on non-scalar var");
        val.iter().next().copied().unwrap()
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.push(value, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.push(ArrayD::from_elem(IxDyn(&[1]), value), Op::Leaf)
    }

    // ---- elementwise -------------------------------------------------

    fn binary_same_shape(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "elementwise op on mismatched shapes"
        );
        let mut out = self.nodes[a.0].value.clone();
        out.zip_mut_with(&self.nodes[b.0].value, |x, y| *x = f(*x, *y));
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.nodes[a.0].value.mapv(f);
        self.push(out, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    // ---- reductions and broadcasts ------------------------------------

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::SumAll(a))
    }

    /// Mean of all entries, as a `[1]` scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Scalar broadcast to `shape`.
    pub fn broadcast_all(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.scalar(a);
        self.push(ArrayD::from_elem(IxDyn(shape), v), Op::BroadcastAll(a))
    }

    /// Sum over all axes except axis 0; output shape `[N]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let val = &self.nodes[a.0].value;
        let n = val.shape()[0];
        let per = val.len() / n;
        let flat = val.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(flat[i * per..(i + 1) * per].iter().sum::<f64>());
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[n]), out).unwrap(),
            Op::SumPerSample(a),
        )
    }

    /// Mean over all axes except axis 0; output shape `[N]`.
    pub fn mean_per_sample(&mut self, a: Var) -> Var {
        let val = &self.nodes[a.0].value;
        let per = (val.len() / val.shape()[0]) as f64;
        let s = self.sum_per_sample(a);
        self.scale(s, 1.0 / per)
    }

    /// `[N]` vector broadcast across each sample's slice of `shape`.
    pub fn broadcast_per_sample(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.ndim(), 1, "broadcast_per_sample expects a vector");
        let n = av.len();
        assert_eq!(n, shape[0], "broadcast_per_sample batch mismatch");
        let per: usize = shape[1..].iter().product();
        let src = av.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(n * per);
        for &v in src {
            out.extend(std::iter::repeat(v).take(per));
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(shape), out).unwrap(),
            Op::BroadcastPerSample(a),
        )
    }

    /// (N,C,H,W) summed over H and W; output (N,C).
    pub fn sum_spatial(&mut self, a: Var) -> Var {
        let val = self.nodes[a.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = val.dim();
        let mut out = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                let mut s = 0.0;
                for hi in 0..h {
                    for wi in 0..w {
                        s += val[[ni, ci, hi, wi]];
                    }
                }
                out.push(s);
            }
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[n, c]), out).unwrap(),
            Op::SumSpatial(a),
        )
    }

    /// (N,C) broadcast to (N,C,H,W).
    pub fn broadcast_spatial(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.ndim(), 2, "broadcast_spatial expects (N,C)");
        assert_eq!(shape.len(), 4);
        assert_eq!(av.shape()[0], shape[0]);
        assert_eq!(av.shape()[1], shape[1]);
        let per = shape[2] * shape[3];
        let src = av.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(av.len() * per);
        for &v in src {
            out.extend(std::iter::repeat(v).take(per));
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(shape), out).unwrap(),
            Op::BroadcastSpatial(a),
        )
    }

    /// (N,M) summed over rows; output (M,).
    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let val = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let out = val.sum_axis(ndarray::Axis(0));
        self.push(out.into_dyn(), Op::SumAxis0(a))
    }

    /// (M,) broadcast to (N,M).
    pub fn broadcast_axis0(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.ndim(), 1);
        assert_eq!(shape.len(), 2);
        assert_eq!(av.len(), shape[1]);
        let src = av.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(shape[0] * shape[1]);
        for _ in 0..shape[0] {
            out.extend_from_slice(src);
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(shape), out).unwrap(),
            Op::BroadcastAxis0(a),
        )
    }

    /// (N,C,H,W) summed over N, H, W; output (C,).
    pub fn sum_to_chan(&mut self, a: Var) -> Var {
        let val = self.nodes[a.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = val.dim();
        let mut out = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        out[ci] += val[[ni, ci, hi, wi]];
                    }
                }
            }
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[c]), out).unwrap(),
            Op::SumToChan(a),
        )
    }

    /// (C,) broadcast to (N,C,H,W).
    pub fn broadcast_chan(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.ndim(), 1);
        assert_eq!(shape.len(), 4);
        assert_eq!(av.len(), shape[1]);
        let src = av.as_slice().expect("standard layout");
        let per = shape[2] * shape[3];
        let mut out = Vec::with_capacity(shape.iter().product());
        for _ in 0..shape[0] {
            for &v in src {
                out.extend(std::iter::repeat(v).take(per));
            }
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(shape), out).unwrap(),
            Op::BroadcastChan(a),
        )
    }

    // ---- linear algebra ------------------------------------------------

    /// (N,K) x (K,M) matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dim mismatch");
        let out = av.dot(&bv);
        self.push(out.into_dyn(), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let out = av.t().to_owned();
        self.push(out.into_dyn(), Op::Transpose(a))
    }

    /// (N,M) + row vector (M,).
    pub fn add_bias2d(&mut self, x: Var, b: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = &self.nodes[b.0].value;
        assert_eq!(bv.ndim(), 1);
        assert_eq!(xv.ncols(), bv.len(), "bias length mismatch");
        let bsl = bv.as_slice().expect("standard layout");
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            for (o, bb) in row.iter_mut().zip(bsl) {
                *o += bb;
            }
        }
        self.push(out.into_dyn(), Op::AddBias2d(x, b))
    }

    /// (N,C,H,W) + per-channel bias (C,).
    pub fn add_bias_chan(&mut self, x: Var, b: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let bv = &self.nodes[b.0].value;
        assert_eq!(bv.ndim(), 1);
        assert_eq!(xv.dim().1, bv.len(), "bias channel mismatch");
        let bsl = bv.as_slice().expect("standard layout").to_vec();
        let mut out = xv.to_owned();
        for ((_, ci, _, _), v) in out.indexed_iter_mut() {
            *v += bsl[ci];
        }
        self.push(out.into_dyn(), Op::AddBiasChan(x, b))
    }

    // ---- convolution family ---------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let out = conv2d(&xv, &wv, stride, pad);
        self.push(out.into_dyn(), Op::Conv2d { x, w, stride, pad })
    }

    pub fn conv_back_input(
        &mut self,
        gy: Var,
        w: Var,
        stride: usize,
        pad: usize,
        ih: usize,
        iw: usize,
    ) -> Var {
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let out = conv2d_back_input(&gv, &wv, stride, pad, ih, iw);
        self.push(out.into_dyn(), Op::ConvBackInput { gy, w, stride, pad })
    }

    pub fn conv_back_weight(
        &mut self,
        x: Var,
        gy: Var,
        stride: usize,
        pad: usize,
        kh: usize,
        kw: usize,
    ) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let out = conv2d_back_weight(&xv, &gv, stride, pad, kh, kw);
        self.push(out.into_dyn(), Op::ConvBackWeight { x, gy, stride, pad })
    }

    // ---- shape plumbing ---------------------------------------------------

    /// Concatenate along the channel axis (axis 1) of two (N,C,H,W) arrays.
    pub fn concat_chan(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, ca, h, w) = av.dim();
        let (nb, cb, hb, wb) = bv.dim();
        assert!(n == nb && h == hb && w == wb, "concat_chan shape mismatch");
        let out = ndarray::concatenate(ndarray::Axis(1), &[av, bv]).unwrap();
        let _ = (ca, cb);
        self.push(
            out.as_standard_layout().to_owned().into_dyn(),
            Op::ConcatChan(a, b),
        )
    }

    /// Channels `start..start+len` of an (N,C,H,W) array.
    pub fn slice_chan(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        assert!(start + len <= xv.dim().1, "slice_chan out of range");
        let out = xv
            .slice(ndarray::s![.., start..start + len, .., ..])
            .to_owned();
        self.push(out.into_dyn(), Op::SliceChan { x, start, len })
    }

    /// Zero-pad the channel axis with `before`/`after` channels.
    pub fn pad_chan(&mut self, x: Var, before: usize, after: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = xv.dim();
        let mut out = ndarray::Array4::<f64>::zeros((n, before + c + after, h, w));
        out.slice_mut(ndarray::s![.., before..before + c, .., ..])
            .assign(&xv);
        self.push(out.into_dyn(), Op::PadChan { x, before, after })
    }

    /// out.flat[i] = x.flat[idx[i]]; `idx.len()` must equal the product of
    /// `out_shape`.
    pub fn gather(&mut self, x: Var, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Var {
        let numel: usize = out_shape.iter().product();
        assert_eq!(idx.len(), numel, "gather index count mismatch");
        let src = self.nodes[x.0].value.as_slice().expect("standard layout");
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        self.push(
            ArrayD::from_shape_vec(IxDyn(out_shape), out).unwrap(),
            Op::Gather { x, idx },
        )
    }

    /// out.flat[idx[i]] += x.flat[i] into a zeroed array of `out_shape`.
    pub fn scatter(&mut self, x: Var, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Var {
        let src = self.nodes[x.0].value.as_slice().expect("standard layout");
        assert_eq!(idx.len(), src.len(), "scatter index count mismatch");
        let numel: usize = out_shape.iter().product();
        let mut out = vec![0.0; numel];
        for (&i, &v) in idx.iter().zip(src) {
            out[i] += v;
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(out_shape), out).unwrap(),
            Op::Scatter { x, idx },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let val = &self.nodes[x.0].value;
        assert_eq!(
            val.len(),
            shape.iter().product::<usize>(),
            "reshape element count mismatch"
        );
        let out = ArrayD::from_shape_vec(
            IxDyn(shape),
            val.as_slice().expect("standard layout").to_vec(),
        )
        .unwrap();
        self.push(out, Op::Reshape(x))
    }

    // ---- autodiff -----------------------------------------------------------

    fn parents(op: &Op) -> Vec<Var> {
        use Op::*;
        match op {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b)
            | AddBias2d(a, b) | AddBiasChan(a, b) | ConcatChan(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a, _) | Exp(a) | Log(a) | Sqrt(a) | Abs(a)
            | Relu(a) | LeakyRelu(a, _) | Tanh(a) | SumAll(a) | BroadcastAll(a)
            | SumPerSample(a) | BroadcastPerSample(a) | SumSpatial(a) | BroadcastSpatial(a)
            | SumAxis0(a) | BroadcastAxis0(a) | SumToChan(a) | BroadcastChan(a)
            | Transpose(a) | Reshape(a) => vec![*a],
            Conv2d { x, w, .. } => vec![*x, *w],
            ConvBackInput { gy, w, .. } => vec![*gy, *w],
            ConvBackWeight { x, gy, .. } => vec![*x, *gy],
            SliceChan { x, .. } | PadChan { x, .. } | Gather { x, .. } | Scatter { x, .. } => {
                vec![*x]
            }
        }
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) {
        adj[target.0] = Some(match adj[target.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Gradients of scalar `y` with respect to each var in `wrt`.
    ///
    /// The returned vars live in the same graph and can be differentiated
    /// again. Vars that `y` does not depend on get a zero gradient.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.nodes[y.0].value.len(), 1, "grad target must be scalar");
        let n = self.nodes.len();

        let mut needed = vec![false; n];
        let mut stack = vec![y.0];
        needed[y.0] = true;
        while let Some(i) = stack.pop() {
            for p in Self::parents(&self.nodes[i].op) {
                if !needed[p.0] {
                    needed[p.0] = true;
                    stack.push(p.0);
                }
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        adj[y.0] = Some(self.leaf_scalar(1.0));

        for i in (0..n).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            use Op::*;
            match op {
                Leaf => {}
                Add(a, b) => {
                    self.accumulate(&mut adj, a, g);
                    self.accumulate(&mut adj, b, g);
                }
                Sub(a, b) => {
                    self.accumulate(&mut adj, a, g);
                    let ng = self.neg(g);
                    self.accumulate(&mut adj, b, ng);
                }
                Mul(a, b) => {
                    let ga = self.mul(g, b);
                    let gb = self.mul(g, a);
                    self.accumulate(&mut adj, a, ga);
                    self.accumulate(&mut adj, b, gb);
                }
                Div(a, b) => {
                    let ga = self.div(g, b);
                    self.accumulate(&mut adj, a, ga);
                    // d(a/b)/db = -y/b
                    let gy_y = self.mul(g, out);
                    let gb = self.div(gy_y, b);
                    let gb = self.neg(gb);
                    self.accumulate(&mut adj, b, gb);
                }
                Neg(a) => {
                    let ng = self.neg(g);
                    self.accumulate(&mut adj, a, ng);
                }
                Scale(a, c) => {
                    let sg = self.scale(g, c);
                    self.accumulate(&mut adj, a, sg);
                }
                AddScalar(a, _) => self.accumulate(&mut adj, a, g),
                Exp(a) => {
                    let ga = self.mul(g, out);
                    self.accumulate(&mut adj, a, ga);
                }
                Log(a) => {
                    let ga = self.div(g, a);
                    self.accumulate(&mut adj, a, ga);
                }
                Sqrt(a) => {
                    let half = self.scale(g, 0.5);
                    let ga = self.div(half, out);
                    self.accumulate(&mut adj, a, ga);
                }
                Abs(a) => {
                    let mask = self.nodes[a.0].value.mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    let m = self.leaf(mask);
                    let ga = self.mul(g, m);
                    self.accumulate(&mut adj, a, ga);
                }
                Relu(a) => {
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let m = self.leaf(mask);
                    let ga = self.mul(g, m);
                    self.accumulate(&mut adj, a, ga);
                }
                LeakyRelu(a, slope) => {
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { slope });
                    let m = self.leaf(mask);
                    let ga = self.mul(g, m);
                    self.accumulate(&mut adj, a, ga);
                }
                Tanh(a) => {
                    let y2 = self.mul(out, out);
                    let ny2 = self.neg(y2);
                    let one_minus = self.add_scalar(ny2, 1.0);
                    let ga = self.mul(g, one_minus);
                    self.accumulate(&mut adj, a, ga);
                }
                SumAll(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.broadcast_all(g, &shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastAll(a) => {
                    let ga = self.sum_all(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumPerSample(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.broadcast_per_sample(g, &shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastPerSample(a) => {
                    let ga = self.sum_per_sample(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumSpatial(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.broadcast_spatial(g, &shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastSpatial(a) => {
                    let ga = self.sum_spatial(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumAxis0(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.broadcast_axis0(g, &shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastAxis0(a) => {
                    let ga = self.sum_axis0(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumToChan(a) => {
                    let shape = self.shape(a).to_vec();
                    let ga = self.broadcast_chan(g, &shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastChan(a) => {
                    let ga = self.sum_to_chan(g);
                    self.accumulate(&mut adj, a, ga);
                }
                MatMul(a, b) => {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt);
                    self.accumulate(&mut adj, a, ga);
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g);
                    self.accumulate(&mut adj, b, gb);
                }
                Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut adj, a, ga);
                }
                AddBias2d(x, b) => {
                    self.accumulate(&mut adj, x, g);
                    let gb = self.sum_axis0(g);
                    self.accumulate(&mut adj, b, gb);
                }
                AddBiasChan(x, b) => {
                    self.accumulate(&mut adj, x, g);
                    let gb = self.sum_to_chan(g);
                    self.accumulate(&mut adj, b, gb);
                }
                Conv2d { x, w, stride, pad } => {
                    let xs = self.shape(x).to_vec();
                    let gx = self.conv_back_input(g, w, stride, pad, xs[2], xs[3]);
                    self.accumulate(&mut adj, x, gx);
                    let ws = self.shape(w).to_vec();
                    let gw = self.conv_back_weight(x, g, stride, pad, ws[2], ws[3]);
                    self.accumulate(&mut adj, w, gw);
                }
                ConvBackInput { gy, w, stride, pad } => {
                    let ggy = self.conv2d(g, w, stride, pad);
                    self.accumulate(&mut adj, gy, ggy);
                    let ws = self.shape(w).to_vec();
                    let gw = self.conv_back_weight(g, gy, stride, pad, ws[2], ws[3]);
                    self.accumulate(&mut adj, w, gw);
                }
                ConvBackWeight { x, gy, stride, pad } => {
                    let xs = self.shape(x).to_vec();
                    let gx = self.conv_back_input(gy, g, stride, pad, xs[2], xs[3]);
                    self.accumulate(&mut adj, x, gx);
                    let ggy = self.conv2d(x, g, stride, pad);
                    self.accumulate(&mut adj, gy, ggy);
                }
                ConcatChan(a, b) => {
                    let ca = self.shape(a)[1];
                    let cb = self.shape(b)[1];
                    let ga = self.slice_chan(g, 0, ca);
                    self.accumulate(&mut adj, a, ga);
                    let gb = self.slice_chan(g, ca, cb);
                    self.accumulate(&mut adj, b, gb);
                }
                SliceChan { x, start, len } => {
                    let cx = self.shape(x)[1];
                    let gx = self.pad_chan(g, start, cx - start - len);
                    self.accumulate(&mut adj, x, gx);
                }
                PadChan { x, before, .. } => {
                    let cx = self.shape(x)[1];
                    let gx = self.slice_chan(g, before, cx);
                    self.accumulate(&mut adj, x, gx);
                }
                Gather { x, idx } => {
                    let shape = self.shape(x).to_vec();
                    let gx = self.scatter(g, idx, &shape);
                    self.accumulate(&mut adj, x, gx);
                }
                Scatter { x, idx } => {
                    let shape = self.shape(x).to_vec();
                    let gx = self.gather(g, idx, &shape);
                    self.accumulate(&mut adj, x, gx);
                }
                Reshape(x) => {
                    let shape = self.shape(x).to_vec();
                    let gx = self.reshape(g, &shape);
                    self.accumulate(&mut adj, x, gx);
                }
            }
        }

        wrt.iter()
            .map(|v| {
                adj[v.0].unwrap_or_else(|| {
                    let zeros = ArrayD::zeros(self.nodes[v.0].value.raw_dim());
                    self.leaf(zeros)
                })
            })
            .collect()
    }
}

/// Sanity helper: output spatial size of a conv stack layer.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    conv_out_len(input, kernel, stride, pad)
}

#[cfg(test)]
mod tests;
