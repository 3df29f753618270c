//! Dense convolution kernels (im2col + GEMM) shared by the graph ops.
//!
//! All three members of the conv family live here: the forward
//! cross-correlation, the input-gradient (transposed conv) and the
//! weight-gradient. They are plain array functions; the autodiff graph
//! wires them together.

use ndarray::{Array2, Array4, ArrayView4};

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Lowers `x` (N,C,H,W) to a (C*KH*KW, N*OH*OW) matrix of patches.
fn im2col(
    x: &ArrayView4<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let mut cols = Array2::<f64>::zeros((c * kh * kw, n * oh * ow));
    for ni in 0..n {
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            cols[[row, (ni * oh + oi) * ow + oj]] =
                                x[[ni, ci, ii as usize, jj as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Accumulates a (C*KH*KW, N*OH*OW) patch matrix back into an (N,C,H,W) array.
fn col2im(
    cols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let mut x = Array4::<f64>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            x[[ni, ci, ii as usize, jj as usize]] +=
                                cols[[row, (ni * oh + oi) * ow + oj]];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of `x` (N,Cin,H,W) with `w` (Cout,Cin,KH,KW).
pub fn conv2d(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, cin, h, wd) = x.dim();
    let (cout, cin_w, kh, kw) = w.dim();
    assert_eq!(cin, cin_w, "conv2d channel mismatch");
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(wd, kw, stride, pad);

    let cols = im2col(x, kh, kw, stride, pad);
    let w_mat = w
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape")
        .to_owned();
    let out_mat = w_mat.dot(&cols); // (Cout, N*OH*OW)

    let mut y = Array4::<f64>::zeros((n, cout, oh, ow));
    for co in 0..cout {
        for ni in 0..n {
            for oi in 0..oh {
                for oj in 0..ow {
                    y[[ni, co, oi, oj]] = out_mat[[co, (ni * oh + oi) * ow + oj]];
                }
            }
        }
    }
    y
}

/// Gradient of `conv2d` with respect to its input.
///
/// `gy` is (N,Cout,OH,OW); the result has spatial extent (ih, iw), which must
/// be supplied because strided convs do not determine it uniquely.
pub fn conv2d_back_input(
    gy: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    ih: usize,
    iw: usize,
) -> Array4<f64> {
    let (n, cout, oh, ow) = gy.dim();
    let (cout_w, cin, kh, kw) = w.dim();
    assert_eq!(cout, cout_w, "conv2d_back_input channel mismatch");
    assert_eq!(oh, conv_out_len(ih, kh, stride, pad), "conv2d_back_input oh");
    assert_eq!(ow, conv_out_len(iw, kw, stride, pad), "conv2d_back_input ow");

    let w_mat = w
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape")
        .to_owned();
    let mut gy_mat = Array2::<f64>::zeros((cout, n * oh * ow));
    for co in 0..cout {
        for ni in 0..n {
            for oi in 0..oh {
                for oj in 0..ow {
                    gy_mat[[co, (ni * oh + oi) * ow + oj]] = gy[[ni, co, oi, oj]];
                }
            }
        }
    }
    let cols = w_mat.t().dot(&gy_mat); // (Cin*KH*KW, N*OH*OW)
    col2im(&cols, n, cin, ih, iw, kh, kw, stride, pad)
}

/// Gradient of `conv2d` with respect to its weight.
pub fn conv2d_back_weight(
    x: &ArrayView4<f64>,
    gy: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Array4<f64> {
    let (n, cin, h, wd) = x.dim();
    let (n_g, cout, oh, ow) = gy.dim();
    assert_eq!(n, n_g, "conv2d_back_weight batch mismatch");
    assert_eq!(oh, conv_out_len(h, kh, stride, pad), "conv2d_back_weight oh");
    assert_eq!(ow, conv_out_len(wd, kw, stride, pad), "conv2d_back_weight ow");

    let cols = im2col(x, kh, kw, stride, pad);
    let mut gy_mat = Array2::<f64>::zeros((cout, n * oh * ow));
    for co in 0..cout {
        for ni in 0..n {
            for oi in 0..oh {
                for oj in 0..ow {
                    gy_mat[[co, (ni * oh + oi) * ow + oj]] = gy[[ni, co, oi, oj]];
                }
            }
        }
    }
    let dw_mat = gy_mat.dot(&cols.t()); // (Cout, Cin*KH*KW)
    dw_mat
        .to_shape((cout, cin, kh, kw))
        .expect("dw reshape")
        .to_owned()
}
