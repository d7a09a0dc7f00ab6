use super::ops::{conv_down_bwd, conv_down_fwd, conv_up_bwd, conv_up_fwd};
use super::{Param, Scalar};
use ndarray::{Array1, Array2, Array4, Axis, Ix1, Ix2, Ix4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<S: Scalar>(&self, x: &mut Array4<S>) {
        match *self {
            Activation::None => {}
            Activation::Relu => x.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() }),
            Activation::LeakyRelu(slope) => {
                let a = S::from_f(slope);
                x.mapv_inplace(|v| if v > S::zero() { v } else { v * a });
            }
            Activation::Tanh => x.mapv_inplace(|v| v.tanh()),
            Activation::Sigmoid => {
                x.mapv_inplace(|v| S::one() / (S::one() + (-v).exp()));
            }
        }
    }

    /// Gradient through the activation, expressed in terms of the activation
    /// output `y` (every activation here is invertible enough for that).
    fn backward<S: Scalar>(&self, y: &Array4<S>, dy: &Array4<S>) -> Array4<S> {
        match *self {
            Activation::None => dy.clone(),
            Activation::Relu => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| {
                    if o <= S::zero() {
                        *d = S::zero();
                    }
                });
                dx
            }
            Activation::LeakyRelu(slope) => {
                let a = S::from_f(slope);
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| {
                    if o <= S::zero() {
                        *d = *d * a;
                    }
                });
                dx
            }
            Activation::Tanh => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| *d = *d * (S::one() - o * o));
                dx
            }
            Activation::Sigmoid => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| *d = *d * o * (S::one() - o));
                dx
            }
        }
    }
}

/// Strided 2-d convolution layer, weight layout `[out, in, k, k]`.
pub struct ConvDown<S> {
    pub w: Param<S>,
    pub b: Param<S>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> ConvDown<S> {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvDown {
            w: Param::zeros(&[out_c, in_c, kernel, kernel]),
            b: Param::zeros(&[out_c]),
            kernel,
            stride,
            pad,
        }
    }

    /// Builds a layer whose kernel storage is shared with an up-convolution:
    /// a `[b_ch, a_ch, k, k]` tensor read as `[out, in, k, k]` here is the
    /// same bytes the up-convolution reads as `[in, out, k, k]`.
    pub fn tied(shared_kernel: &Param<S>, stride: usize, pad: usize) -> Self {
        let shape = shared_kernel.shape();
        ConvDown {
            w: shared_kernel.clone(),
            b: Param::zeros(&[shape[0]]),
            kernel: shape[2],
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Array4<S>) -> Array4<S> {
        let w = self.w.value();
        let b = self.b.value();
        conv_down_fwd(
            &x.view(),
            &w.view().into_dimensionality::<Ix4>().unwrap(),
            Some(&b.view().into_dimensionality::<Ix1>().unwrap()),
            self.stride,
            self.pad,
        )
    }

    pub fn backward(
        &self,
        x: &Array4<S>,
        dy: &Array4<S>,
        accumulate: bool,
        need_dx: bool,
    ) -> Option<Array4<S>> {
        let (dx, dwb) = {
            let w = self.w.value();
            conv_down_bwd(
                &x.view(),
                &w.view().into_dimensionality::<Ix4>().unwrap(),
                &dy.view(),
                self.stride,
                self.pad,
                need_dx,
                accumulate,
            )
        };
        if let Some((dw, db)) = dwb {
            self.w.accumulate_grad(&dw.into_dyn());
            self.b.accumulate_grad(&db.column(0).to_owned().into_dyn());
        }
        dx
    }
}

/// Transposed 2-d convolution layer, weight layout `[in, out, k, k]`.
pub struct ConvUp<S> {
    pub w: Param<S>,
    pub b: Param<S>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> ConvUp<S> {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvUp {
            w: Param::zeros(&[in_c, out_c, kernel, kernel]),
            b: Param::zeros(&[out_c]),
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Array4<S>) -> Array4<S> {
        let w = self.w.value();
        let b = self.b.value();
        conv_up_fwd(
            &x.view(),
            &w.view().into_dimensionality::<Ix4>().unwrap(),
            Some(&b.view().into_dimensionality::<Ix1>().unwrap()),
            self.stride,
            self.pad,
        )
    }

    pub fn backward(
        &self,
        x: &Array4<S>,
        dy: &Array4<S>,
        accumulate: bool,
        need_dx: bool,
    ) -> Option<Array4<S>> {
        let (dx, dwb) = {
            let w = self.w.value();
            conv_up_bwd(
                &x.view(),
                &w.view().into_dimensionality::<Ix4>().unwrap(),
                &dy.view(),
                self.stride,
                self.pad,
                need_dx,
                accumulate,
            )
        };
        if let Some((dw, db)) = dwb {
            self.w.accumulate_grad(&dw.into_dyn());
            self.b.accumulate_grad(&db.column(0).to_owned().into_dyn());
        }
        dx
    }
}

/// Batch normalisation over `(n, h, w)` per channel. Statistics always come
/// from the current batch, matching the training-time convention of the
/// image translation setup this implements; there are no running averages.
pub struct BatchNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub eps: f64,
}

pub struct BnCache<S> {
    xhat: Array4<S>,
    inv_std: Array1<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = ndarray::ArrayD::zeros(vec![channels]);
        gamma.fill(S::one());
        BatchNorm {
            gamma: Param::new(gamma),
            beta: Param::zeros(&[channels]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, BnCache<S>) {
        let (n, c, h, w) = x.dim();
        let m = S::from_f((n * h * w) as f64);
        let gamma = self.gamma.value();
        let beta = self.beta.value();
        let mut y = Array4::<S>::zeros((n, c, h, w));
        let mut xhat = Array4::<S>::zeros((n, c, h, w));
        let mut inv_std = Array1::<S>::zeros(c);
        for ch in 0..c {
            let xc = x.index_axis(Axis(1), ch);
            let mu = xc.iter().copied().sum::<S>() / m;
            let var = xc.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / m;
            let is = S::one() / (var + S::from_f(self.eps)).sqrt();
            inv_std[ch] = is;
            let g = gamma[ch];
            let bt = beta[ch];
            let mut xh = xhat.index_axis_mut(Axis(1), ch);
            let mut yc = y.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut xh).and(&mut yc).and(&xc).for_each(|xh, yc, &xv| {
                let nv = (xv - mu) * is;
                *xh = nv;
                *yc = g * nv + bt;
            });
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &BnCache<S>, dy: &Array4<S>, accumulate: bool) -> Array4<S> {
        let (n, c, h, w) = dy.dim();
        let m = S::from_f((n * h * w) as f64);
        let gamma = self.gamma.value();
        let mut dx = Array4::<S>::zeros((n, c, h, w));
        let mut dgamma = Array1::<S>::zeros(c);
        let mut dbeta = Array1::<S>::zeros(c);
        for ch in 0..c {
            let dyc = dy.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_dy = dyc.iter().copied().sum::<S>();
            let sum_dy_xh = dyc.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>();
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            let g_is = gamma[ch] * cache.inv_std[ch];
            let mean_dy = sum_dy / m;
            let mean_dy_xh = sum_dy_xh / m;
            let mut dxc = dx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(|d, &dyv, &xhv| {
                *d = g_is * (dyv - mean_dy - xhv * mean_dy_xh);
            });
        }
        drop(gamma);
        if accumulate {
            self.gamma.accumulate_grad(&dgamma.into_dyn());
            self.beta.accumulate_grad(&dbeta.into_dyn());
        }
        dx
    }
}

/// Fully connected layer, weight layout `[out, in]`.
pub struct Linear<S> {
    pub w: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Param::zeros(&[out_dim, in_dim]),
            b: Param::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        let w = self.w.value();
        let b = self.b.value();
        let wv = w.view().into_dimensionality::<Ix2>().unwrap();
        let bv = b.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&wv.t());
        for mut row in y.outer_iter_mut() {
            row += &bv;
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array2<S>,
        dy: &Array2<S>,
        accumulate: bool,
    ) -> Array2<S> {
        let w = self.w.value();
        let wv = w.view().into_dimensionality::<Ix2>().unwrap();
        let dx = dy.dot(&wv);
        drop(w);
        if accumulate {
            let dw = dy.t().dot(x);
            let db = dy.sum_axis(Axis(0));
            self.w.accumulate_grad(&dw.into_dyn());
            self.b.accumulate_grad(&db.into_dyn());
        }
        dx
    }
}

/// Conv → BatchNorm → Dropout → activation, the only block shape the
/// generators and discriminators are made of.
pub struct ConvBlock<S> {
    pub conv: ConvKind<S>,
    pub bn: Option<BatchNorm<S>>,
    pub dropout: Option<f64>,
    pub act: Activation,
}

pub enum ConvKind<S> {
    Down(ConvDown<S>),
    Up(ConvUp<S>),
}

pub struct ConvBlockCache<S> {
    pub x: Array4<S>,
    bn: Option<BnCache<S>>,
    mask: Option<Array4<S>>,
    pub y: Array4<S>,
}

impl<S: Scalar> ConvBlock<S> {
    pub fn in_channels(&self) -> usize {
        match &self.conv {
            ConvKind::Down(c) => c.in_channels(),
            ConvKind::Up(c) => c.in_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match &self.conv {
            ConvKind::Down(c) => c.out_channels(),
            ConvKind::Up(c) => c.out_channels(),
        }
    }

    pub fn forward(&self, x: &Array4<S>, rng: &mut ChaCha8Rng) -> ConvBlockCache<S> {
        let mut h = match &self.conv {
            ConvKind::Down(c) => c.forward(x),
            ConvKind::Up(c) => c.forward(x),
        };
        let bn_cache = self.bn.as_ref().map(|bn| {
            let (y, cache) = bn.forward(&h);
            h = y;
            cache
        });
        let mask = self.dropout.map(|rate| {
            let keep_scale = S::from_f(1.0 / (1.0 - rate));
            let mask = Array4::from_shape_simple_fn(h.dim(), || {
                if rng.gen::<f64>() < rate {
                    S::zero()
                } else {
                    keep_scale
                }
            });
            h.zip_mut_with(&mask, |v, &m| *v = *v * m);
            mask
        });
        self.act.apply(&mut h);
        ConvBlockCache {
            x: x.clone(),
            bn: bn_cache,
            mask,
            y: h,
        }
    }

    pub fn backward(
        &self,
        dy: &Array4<S>,
        cache: &ConvBlockCache<S>,
        accumulate: bool,
        need_dx: bool,
    ) -> Option<Array4<S>> {
        let mut d = self.act.backward(&cache.y, dy);
        if let Some(mask) = &cache.mask {
            d.zip_mut_with(mask, |v, &m| *v = *v * m);
        }
        if let (Some(bn), Some(bn_cache)) = (&self.bn, &cache.bn) {
            d = bn.backward(bn_cache, &d, accumulate);
        }
        match &self.conv {
            ConvKind::Down(c) => c.backward(&cache.x, &d, accumulate, need_dx),
            ConvKind::Up(c) => c.backward(&cache.x, &d, accumulate, need_dx),
        }
    }
}
