use super::*;
use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

fn rand_pos(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

fn eval<F>(params: &[ArrayD<f64>], f: &F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let y = f(&mut g, &vars);
    g.scalar(y)
}

/// Central finite differences against the symbolic gradient.
fn check_grad<F>(params: &[ArrayD<f64>], f: F, tol: f64)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let y = f(&mut g, &vars);
    let grads = g.grad(y, &vars);
    let analytic: Vec<ArrayD<f64>> = grads.iter().map(|&gv| g.value(gv).to_owned()).collect();

    let h = 1e-5;
    for (pi, p) in params.iter().enumerate() {
        for idx in 0..p.len() {
            let mut plus = params.to_vec();
            plus[pi].as_slice_mut().unwrap()[idx] += h;
            let yp = eval(&plus, &f);
            let mut minus = params.to_vec();
            minus[pi].as_slice_mut().unwrap()[idx] -= h;
            let ym = eval(&minus, &f);
            let numeric = (yp - ym) / (2.0 * h);
            let ana = analytic[pi].as_slice().unwrap()[idx];
            let denom = 1.0f64.max(ana.abs()).max(numeric.abs());
            assert!(
                (ana - numeric).abs() / denom < tol,
                "param {pi} entry {idx}: analytic {ana} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn grad_elementwise_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&[3, 4], &mut rng);
    let b = rand_pos(&[3, 4], &mut rng);
    check_grad(
        &[a, b],
        |g, vs| {
            let t = g.tanh(vs[0]);
            let e = g.exp(vs[0]);
            let q = g.div(t, vs[1]);
            let l = g.log(vs[1]);
            let s = g.sqrt(vs[1]);
            let m1 = g.mul(q, e);
            let m2 = g.mul(l, s);
            let d = g.sub(m1, m2);
            let ab = g.abs(d);
            let sc = g.scale(ab, 0.7);
            let sh = g.add_scalar(sc, 0.3);
            g.mean_all(sh)
        },
        1e-6,
    );
}

#[test]
fn grad_relu_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep entries away from the kink
    let mut a = randn(&[4, 5], &mut rng);
    a.mapv_inplace(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    check_grad(
        &[a],
        |g, vs| {
            let r = g.relu(vs[0]);
            let l = g.leaky_relu(vs[0], 0.2);
            let s = g.add(r, l);
            let n = g.neg(s);
            g.mean_all(n)
        },
        1e-6,
    );
}

#[test]
fn grad_matmul_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[4, 2], &mut rng);
    let bias = randn(&[2], &mut rng);
    check_grad(
        &[a, b, bias],
        |g, vs| {
            let y = g.matmul(vs[0], vs[1]);
            let y = g.add_bias2d(y, vs[2]);
            let yt = g.transpose(y);
            let sq = g.mul(yt, yt);
            g.sum_all(sq)
        },
        1e-6,
    );
}

#[test]
fn grad_conv_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&[2, 3, 6, 4], &mut rng);
    let w1 = randn(&[4, 3, 3, 3], &mut rng);
    let b1 = randn(&[4], &mut rng);
    let w2 = randn(&[2, 4, 1, 1], &mut rng);
    check_grad(
        &[x, w1, b1, w2],
        |g, vs| {
            let y = g.conv2d(vs[0], vs[1], 2, 1);
            let y = g.add_bias_chan(y, vs[2]);
            let y = g.leaky_relu(y, 0.2);
            let y = g.conv2d(y, vs[3], 1, 0);
            let y = g.tanh(y);
            g.mean_all(y)
        },
        1e-6,
    );
}

#[test]
fn grad_concat_slice_pad() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = randn(&[2, 2, 3, 3], &mut rng);
    let b = randn(&[2, 3, 3, 3], &mut rng);
    check_grad(
        &[a, b],
        |g, vs| {
            let c = g.concat_chan(vs[0], vs[1]);
            let s = g.slice_chan(c, 1, 3);
            let p = g.pad_chan(s, 1, 2);
            let sq = g.mul(p, p);
            g.sum_all(sq)
        },
        1e-6,
    );
}

#[test]
fn grad_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randn(&[3, 2, 4, 2], &mut rng);
    let m = randn(&[5, 3], &mut rng);
    check_grad(
        &[x, m],
        |g, vs| {
            let sp = g.sum_spatial(vs[0]); // (3,2)
            let ps = g.sum_per_sample(vs[0]); // (3,)
            let bc = g.broadcast_per_sample(ps, &[3, 2]);
            let mixed = g.mul(sp, bc);
            let tc = g.sum_to_chan(vs[0]); // (2,)
            let bc2 = g.broadcast_axis0(tc, &[3, 2]);
            let mixed = g.add(mixed, bc2);
            let s1 = g.sum_all(mixed);
            let r = g.sum_axis0(vs[1]); // (3,)
            let rr = g.mul(r, r);
            let s2 = g.sum_all(rr);
            g.add(s1, s2)
        },
        1e-6,
    );
}

#[test]
fn grad_gather_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&[2, 3, 4], &mut rng);
    let idx = Rc::new(vec![0usize, 5, 7, 11, 23, 2]);
    check_grad(
        &[x],
        |g, vs| {
            let taken = g.gather(vs[0], idx.clone(), &[6]);
            let sq = g.mul(taken, taken);
            let back = g.scatter(sq, idx.clone(), &[2, 3, 4]);
            g.sum_all(back)
        },
        1e-6,
    );
}

#[test]
fn grad_unused_param_is_zero() {
    let mut g = Graph::new();
    let a = g.leaf_scalar(2.0);
    let b = g.leaf_scalar(5.0);
    let y = g.mul(a, a);
    let grads = g.grad(y, &[a, b]);
    assert!((g.scalar(grads[0]) - 4.0).abs() < 1e-12);
    assert_eq!(g.scalar(grads[1]), 0.0);
}

#[test]
fn grad_per_sample_norm_penalty() {
    // shape of the gradient-penalty arithmetic: mean((||x_i|| - 1)^2)
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_pos(&[3, 2, 2, 2], &mut rng);
    check_grad(
        &[x],
        |g, vs| {
            let sq = g.mul(vs[0], vs[0]);
            let ss = g.sum_per_sample(sq);
            let norm = g.sqrt(ss);
            let dev = g.add_scalar(norm, -1.0);
            let dev2 = g.mul(dev, dev);
            g.mean_all(dev2)
        },
        1e-6,
    );
}

/// Numeric evaluation of a gradient-penalty-style functional for the
/// double-backprop test: pen(w) = mean_i (||d f/d x_i|| - 1)^2 where
/// f = sum over a conv-leaky-relu net applied to fixed x.
fn penalty_value(x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.leaf(w.clone());
    let bv = g.leaf(b.clone());
    let y = g.conv2d(xv, wv, 1, 1);
    let y = g.add_bias_chan(y, bv);
    let y = g.leaky_relu(y, 0.2);
    let f = g.sum_all(y);
    let gx = g.grad(f, &[xv])[0];
    let sq = g.mul(gx, gx);
    let ss = g.sum_per_sample(sq);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev);
    let pen = g.mean_all(dev2);
    g.scalar(pen)
}

#[test]
fn double_backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&[2, 2, 4, 3], &mut rng);
    let w = randn(&[3, 2, 3, 3], &mut rng);
    let b = randn(&[3], &mut rng);

    // analytic d pen / d (w, b) via grad-of-grad
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.leaf(w.clone());
    let bv = g.leaf(b.clone());
    let y = g.conv2d(xv, wv, 1, 1);
    let y = g.add_bias_chan(y, bv);
    let y = g.leaky_relu(y, 0.2);
    let f = g.sum_all(y);
    let gx = g.grad(f, &[xv])[0];
    let sq = g.mul(gx, gx);
    let ss = g.sum_per_sample(sq);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev);
    let pen = g.mean_all(dev2);
    let grads = g.grad(pen, &[wv, bv]);
    let gw = g.value(grads[0]).to_owned();
    let gb = g.value(grads[1]).to_owned();

    let h = 1e-5;
    for idx in 0..w.len() {
        let mut wp = w.clone();
        wp.as_slice_mut().unwrap()[idx] += h;
        let mut wm = w.clone();
        wm.as_slice_mut().unwrap()[idx] -= h;
        let numeric = (penalty_value(&x, &wp, &b) - penalty_value(&x, &wm, &b)) / (2.0 * h);
        let ana = gw.as_slice().unwrap()[idx];
        let denom = 1.0f64.max(ana.abs()).max(numeric.abs());
        assert!(
            (ana - numeric).abs() / denom < 1e-6,
            "w[{idx}]: analytic {ana} vs numeric {numeric}"
        );
    }
    for idx in 0..b.len() {
        let mut bp = b.clone();
        bp.as_slice_mut().unwrap()[idx] += h;
        let mut bm = b.clone();
        bm.as_slice_mut().unwrap()[idx] -= h;
        let numeric = (penalty_value(&x, &w, &bp) - penalty_value(&x, &w, &bm)) / (2.0 * h);
        let ana = gb.as_slice().unwrap()[idx];
        let denom = 1.0f64.max(ana.abs()).max(numeric.abs());
        assert!(
            (ana - numeric).abs() / denom < 1e-6,
            "b[{idx}]: analytic {ana} vs numeric {numeric}"
        );
    }
}

#[test]
fn strided_conv_roundtrip_shapes() {
    let mut g = Graph::new();
    let x = g.leaf(ArrayD::zeros(IxDyn(&[1, 3, 9, 5])));
    let w = g.leaf(ArrayD::zeros(IxDyn(&[4, 3, 3, 3])));
    let y = g.conv2d(x, w, 2, 1);
    assert_eq!(g.shape(y), &[1, 4, 5, 3]);
    let gy = g.leaf(ArrayD::zeros(IxDyn(&[1, 4, 5, 3])));
    let back = g.conv_back_input(gy, w, 2, 1, 9, 5);
    assert_eq!(g.shape(back), &[1, 3, 9, 5]);
}
