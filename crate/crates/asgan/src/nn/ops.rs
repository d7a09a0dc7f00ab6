//! Convolution primitives in im2col/GEMM form. `conv_down_*` is an ordinary
//! strided convolution with weight layout `[out, in, kh, kw]`; `conv_up_*`
//! is its adjoint (a transposed convolution) with weight layout
//! `[in, out, kh, kw]`. The two layouts coincide for a tied kernel pair: a
//! `[b, a, k, k]` tensor acts as an `a -> b` down-convolution and as a
//! `b -> a` up-convolution without any data movement.

use super::Scalar;
use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};

/// Output side length of a strided convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Output side length of a transposed convolution.
pub fn conv_up_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Gathers `k`x`k` patches of `x` (channels-first) into a matrix of shape
/// `[c * k * k, grid_h * grid_w]`, reading `x[c, gh*s + u - p, gw*s + v - p]`
/// with zeros outside the image.
fn im2col<S: Scalar>(
    x: &ArrayView3<S>,
    k: usize,
    stride: usize,
    pad: usize,
    grid: (usize, usize),
) -> Array2<S> {
    let (ch, h, w) = x.dim();
    let (gh_n, gw_n) = grid;
    let mut cols = Array2::<S>::zeros((ch * k * k, gh_n * gw_n));
    for c in 0..ch {
        for u in 0..k {
            for v in 0..k {
                let row = (c * k + u) * k + v;
                let mut out_row = cols.row_mut(row);
                for gh in 0..gh_n {
                    let ih = (gh * stride + u) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for gw in 0..gw_n {
                        let iw = (gw * stride + v) as isize - pad as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        out_row[gh * gw_n + gw] = x[(c, ih as usize, iw as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a `[c * k * k, grid_h * grid_w]`
/// matrix back into a `[c, out_h, out_w]` image.
fn col2im<S: Scalar>(
    cols: &Array2<S>,
    ch: usize,
    out: (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    grid: (usize, usize),
) -> Array3<S> {
    let (oh, ow) = out;
    let (gh_n, gw_n) = grid;
    let mut img = Array3::<S>::zeros((ch, oh, ow));
    for c in 0..ch {
        for u in 0..k {
            for v in 0..k {
                let row = (c * k + u) * k + v;
                let in_row = cols.row(row);
                for gh in 0..gh_n {
                    let ih = (gh * stride + u) as isize - pad as isize;
                    if ih < 0 || ih >= oh as isize {
                        continue;
                    }
                    for gw in 0..gw_n {
                        let iw = (gw * stride + v) as isize - pad as isize;
                        if iw < 0 || iw >= ow as isize {
                            continue;
                        }
                        img[(c, ih as usize, iw as usize)] += in_row[gh * gw_n + gw];
                    }
                }
            }
        }
    }
    img
}

/// Strided convolution. `x: [n, in, h, w]`, `w: [out, in, k, k]`.
pub fn conv_down_fwd<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    b: Option<&ArrayView1<S>>,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let (n, in_c, h, ww) = x.dim();
    let (out_c, w_in, k, _) = w.dim();
    assert_eq!(in_c, w_in, "conv input channels mismatch");
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(ww, k, stride, pad);
    let w_mat = w.to_shape((out_c, in_c * k * k)).unwrap();
    let mut y = Array4::<S>::zeros((n, out_c, oh, ow));
    for i in 0..n {
        let cols = im2col(&x.index_axis(Axis(0), i), k, stride, pad, (oh, ow));
        let y_mat = w_mat.dot(&cols);
        let mut yi = y.index_axis_mut(Axis(0), i);
        yi.assign(&y_mat.into_shape_with_order((out_c, oh, ow)).unwrap());
        if let Some(bias) = b {
            for (mut plane, &bo) in yi.outer_iter_mut().zip(bias.iter()) {
                plane += bo;
            }
        }
    }
    y
}

/// Gradients of [`conv_down_fwd`]. Returns `dx` when `need_dx` and
/// `(dw, db)` when `need_dw`.
#[allow(clippy::type_complexity)]
pub fn conv_down_bwd<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    dy: &ArrayView4<S>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Array4<S>>, Option<(Array4<S>, Array2<S>)>) {
    let (n, in_c, h, ww) = x.dim();
    let (out_c, _, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let w_mat = w.to_shape((out_c, in_c * k * k)).unwrap();
    let mut dx = need_dx.then(|| Array4::<S>::zeros((n, in_c, h, ww)));
    let mut dwb = need_dw.then(|| {
        (
            Array4::<S>::zeros((out_c, in_c, k, k)),
            Array2::<S>::zeros((out_c, 1)),
        )
    });
    for i in 0..n {
        let dy_i = dy.index_axis(Axis(0), i);
        let dy_mat = dy_i.to_shape((out_c, oh * ow)).unwrap();
        if let Some((dw, db)) = dwb.as_mut() {
            let cols = im2col(&x.index_axis(Axis(0), i), k, stride, pad, (oh, ow));
            let dw_mat = dy_mat.dot(&cols.t());
            let mut dw_flat = dw.view_mut().into_shape_with_order((out_c, in_c * k * k)).unwrap();
            dw_flat += &dw_mat;
            let db_col = dy_mat.sum_axis(Axis(1));
            let mut db_flat = db.column_mut(0);
            db_flat += &db_col;
        }
        if let Some(dx) = dx.as_mut() {
            let dcols = w_mat.t().dot(&dy_mat);
            let dxi = col2im(&dcols, in_c, (h, ww), k, stride, pad, (oh, ow));
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
        }
    }
    (dx, dwb)
}

/// Transposed convolution. `x: [n, in, h, w]`, `w: [in, out, k, k]`.
pub fn conv_up_fwd<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    b: Option<&ArrayView1<S>>,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let (n, in_c, h, ww) = x.dim();
    let (w_in, out_c, k, _) = w.dim();
    assert_eq!(in_c, w_in, "transposed conv input channels mismatch");
    let oh = conv_up_out_size(h, k, stride, pad);
    let ow = conv_up_out_size(ww, k, stride, pad);
    let w_mat = w.to_shape((in_c, out_c * k * k)).unwrap();
    let mut y = Array4::<S>::zeros((n, out_c, oh, ow));
    for i in 0..n {
        let xi = x.index_axis(Axis(0), i);
        let x_mat = xi.to_shape((in_c, h * ww)).unwrap();
        let cols = w_mat.t().dot(&x_mat);
        let yi = col2im(&cols, out_c, (oh, ow), k, stride, pad, (h, ww));
        let mut y_out = y.index_axis_mut(Axis(0), i);
        y_out.assign(&yi);
        if let Some(bias) = b {
            for (mut plane, &bo) in y_out.outer_iter_mut().zip(bias.iter()) {
                plane += bo;
            }
        }
    }
    y
}

/// Gradients of [`conv_up_fwd`].
#[allow(clippy::type_complexity)]
pub fn conv_up_bwd<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    dy: &ArrayView4<S>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Array4<S>>, Option<(Array4<S>, Array2<S>)>) {
    let (n, in_c, h, ww) = x.dim();
    let (_, out_c, k, _) = w.dim();
    let w_mat = w.to_shape((in_c, out_c * k * k)).unwrap();
    let mut dx = need_dx.then(|| Array4::<S>::zeros((n, in_c, h, ww)));
    let mut dwb = need_dw.then(|| {
        (
            Array4::<S>::zeros((in_c, out_c, k, k)),
            Array2::<S>::zeros((out_c, 1)),
        )
    });
    for i in 0..n {
        let dy_i = dy.index_axis(Axis(0), i);
        let dcols = im2col(&dy_i, k, stride, pad, (h, ww));
        if let Some(dx) = dx.as_mut() {
            let dx_mat = w_mat.dot(&dcols);
            dx.index_axis_mut(Axis(0), i)
                .assign(&dx_mat.into_shape_with_order((in_c, h, ww)).unwrap());
        }
        if let Some((dw, db)) = dwb.as_mut() {
            let xi = x.index_axis(Axis(0), i);
            let x_mat = xi.to_shape((in_c, h * ww)).unwrap();
            let dw_mat = x_mat.dot(&dcols.t());
            let mut dw_flat = dw
                .view_mut()
                .into_shape_with_order((in_c, out_c * k * k))
                .unwrap();
            dw_flat += &dw_mat;
            let db_sums = dy_i.sum_axis(Axis(2)).sum_axis(Axis(1));
            let mut db_flat = db.column_mut(0);
            db_flat += &db_sums;
        }
    }
    (dx, dwb)
}

/// Channel-axis concatenation of a batch pair.
pub fn concat_channels<S: Scalar>(parts: &[&Array4<S>]) -> Array4<S> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("channel concat shapes")
}

/// Splits a gradient along the channel axis at the given boundaries.
pub fn split_channels<S: Scalar>(x: &Array4<S>, sizes: &[usize]) -> Vec<Array4<S>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &sz in sizes {
        out.push(x.slice(s![.., start..start + sz, .., ..]).to_owned());
        start += sz;
    }
    assert_eq!(start, x.dim().1, "channel split covers all channels");
    out
}
