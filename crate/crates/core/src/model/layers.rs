//! Layer primitives with explicit forward and backward passes.
//!
//! Activations are stored batch-major as `[n][c][h][w]` in one flat buffer.

use crate::scalar::{gemm, Scalar, Trans};

/// Per-example activation shape `(channels, height, width)`.
pub type Shape3 = [usize; 3];

pub(crate) fn volume(shape: Shape3) -> usize {
    shape[0] * shape[1] * shape[2]
}

/// Selects the behaviour of stochastic / statistics-carrying layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `out_features x in_features`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            Trans::No,
            Trans::Yes,
            n,
            self.in_features,
            self.out_features,
            T::one(),
            x,
            &self.weight,
            T::one(),
            &mut y,
        );
        y
    }

    fn backward(&self, x: &[T], dy: &[T], n: usize, grads: Option<&mut [Vec<T>]>) -> Vec<T> {
        let mut dx = vec![T::zero(); n * self.in_features];
        gemm(
            Trans::No,
            Trans::No,
            n,
            self.out_features,
            self.in_features,
            T::one(),
            dy,
            &self.weight,
            T::zero(),
            &mut dx,
        );
        if let Some(g) = grads {
            let (gw, gb) = g.split_at_mut(1);
            gemm(
                Trans::Yes,
                Trans::No,
                self.out_features,
                n,
                self.in_features,
                T::one(),
                dy,
                x,
                T::one(),
                &mut gw[0],
            );
            for row in dy.chunks_exact(self.out_features) {
                for (b, &d) in gb[0].iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Row-major `out_channels x (in_channels * kernel * kernel)`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    pub fn output_shape(&self, input: Shape3) -> Shape3 {
        let out = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        [self.out_channels, out(input[1]), out(input[2])]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds the batch into a `patch_len x (n * out_h * out_w)` matrix.
    fn im2col(&self, x: &[T], n: usize, input: Shape3) -> Vec<T> {
        let [c, h, w] = input;
        let [_, oh, ow] = self.output_shape(input);
        let spatial = oh * ow;
        let cols_n = n * spatial;
        let mut cols = vec![T::zero(); self.patch_len() * cols_n];
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for e in 0..n {
            let img = &x[e * c * h * w..(e + 1) * c * h * w];
            for ch in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ch * k + ki) * k + kj;
                        let dst = &mut cols[row * cols_n + e * spatial..row * cols_n + (e + 1) * spatial];
                        for oy in 0..oh {
                            let iy = (oy * s) as isize - p + ki as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &img[ch * h * w + iy as usize * w..ch * h * w + (iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * s) as isize - p + kj as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[oy * ow + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], n: usize, input: Shape3) -> Vec<T> {
        let [c, h, w] = input;
        let [_, oh, ow] = self.output_shape(input);
        let spatial = oh * ow;
        let cols_n = n * spatial;
        let mut dx = vec![T::zero(); n * c * h * w];
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for e in 0..n {
            let img = &mut dx[e * c * h * w..(e + 1) * c * h * w];
            for ch in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ch * k + ki) * k + kj;
                        let src = &cols[row * cols_n + e * spatial..row * cols_n + (e + 1) * spatial];
                        for oy in 0..oh {
                            let iy = (oy * s) as isize - p + ki as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = ch * h * w + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * s) as isize - p + kj as isize;
                                if ix >= 0 && ix < w as isize {
                                    let d = &mut img[base + ix as usize];
                                    *d = *d + src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn forward(&self, x: &[T], n: usize, input: Shape3) -> (Vec<T>, Vec<T>) {
        let cols = self.im2col(x, n, input);
        let [oc, oh, ow] = self.output_shape(input);
        let spatial = oh * ow;
        let mut out = vec![T::zero(); oc * n * spatial];
        gemm(
            Trans::No,
            Trans::No,
            oc,
            self.patch_len(),
            n * spatial,
            T::one(),
            &self.weight,
            &cols,
            T::zero(),
            &mut out,
        );
        let mut y = vec![T::zero(); n * oc * spatial];
        for ch in 0..oc {
            let b = self.bias.as_ref().map_or(T::zero(), |b| b[ch]);
            for e in 0..n {
                let src = &out[ch * n * spatial + e * spatial..ch * n * spatial + (e + 1) * spatial];
                let dst = &mut y[(e * oc + ch) * spatial..(e * oc + ch + 1) * spatial];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        (y, cols)
    }

    fn backward(
        &self,
        cols: &[T],
        dy: &[T],
        n: usize,
        input: Shape3,
        grads: Option<&mut [Vec<T>]>,
    ) -> Vec<T> {
        let [oc, oh, ow] = self.output_shape(input);
        let spatial = oh * ow;
        let mut dout = vec![T::zero(); oc * n * spatial];
        for e in 0..n {
            for ch in 0..oc {
                let src = &dy[(e * oc + ch) * spatial..(e * oc + ch + 1) * spatial];
                dout[ch * n * spatial + e * spatial..ch * n * spatial + (e + 1) * spatial]
                    .copy_from_slice(src);
            }
        }
        if let Some(g) = grads {
            gemm(
                Trans::No,
                Trans::Yes,
                oc,
                n * spatial,
                self.patch_len(),
                T::one(),
                &dout,
                cols,
                T::one(),
                &mut g[0],
            );
            if self.bias.is_some() {
                for ch in 0..oc {
                    let s: T = dout[ch * n * spatial..(ch + 1) * n * spatial].iter().copied().sum();
                    g[1][ch] = g[1][ch] + s;
                }
            }
        }
        let mut dcols = vec![T::zero(); self.patch_len() * n * spatial];
        gemm(
            Trans::Yes,
            Trans::No,
            self.patch_len(),
            oc,
            n * spatial,
            T::one(),
            &self.weight,
            &dout,
            T::zero(),
            &mut dcols,
        );
        self.col2im(&dcols, n, input)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn forward(&self, x: &[T], n: usize, shape: Shape3, mode: Mode) -> (Vec<T>, BnCache<T>) {
        let c = self.channels;
        let spatial = shape[1] * shape[2];
        let count = n * spatial;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        match mode {
            Mode::Train => {
                for e in 0..n {
                    for ch in 0..c {
                        let s = &x[(e * c + ch) * spatial..(e * c + ch + 1) * spatial];
                        mean[ch] += s.iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                }
                for m in mean.iter_mut() {
                    *m /= count as f64;
                }
                for e in 0..n {
                    for ch in 0..c {
                        let s = &x[(e * c + ch) * spatial..(e * c + ch + 1) * spatial];
                        var[ch] += s.iter().map(|v| (v.as_f64() - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                for v in var.iter_mut() {
                    *v /= count as f64;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = self.running_mean[ch].as_f64();
                    var[ch] = self.running_var[ch].as_f64();
                }
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for e in 0..n {
            for ch in 0..c {
                let m = T::from_f64(mean[ch]);
                let is = T::from_f64(inv_std[ch]);
                let range = (e * c + ch) * spatial..(e * c + ch + 1) * spatial;
                for i in range {
                    let h = (x[i] - m) * is;
                    xhat[i] = h;
                    y[i] = self.gamma[ch] * h + self.beta[ch];
                }
            }
        }
        let unbiased = if count > 1 {
            var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect()
        } else {
            var.clone()
        };
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mode,
                batch_mean: mean,
                batch_var_unbiased: unbiased,
            },
        )
    }

    fn backward(
        &self,
        cache: &BnCache<T>,
        dy: &[T],
        n: usize,
        shape: Shape3,
        grads: Option<&mut [Vec<T>]>,
    ) -> Vec<T> {
        let c = self.channels;
        let spatial = shape[1] * shape[2];
        let count = (n * spatial) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for e in 0..n {
            for ch in 0..c {
                let range = (e * c + ch) * spatial..(e * c + ch + 1) * spatial;
                for i in range {
                    sum_dy[ch] += dy[i].as_f64();
                    sum_dy_xhat[ch] += (dy[i] * cache.xhat[i]).as_f64();
                }
            }
        }
        if let Some(g) = grads {
            for ch in 0..c {
                g[0][ch] = g[0][ch] + T::from_f64(sum_dy_xhat[ch]);
                g[1][ch] = g[1][ch] + T::from_f64(sum_dy[ch]);
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        for e in 0..n {
            for ch in 0..c {
                let gamma = self.gamma[ch].as_f64();
                let is = cache.inv_std[ch];
                let range = (e * c + ch) * spatial..(e * c + ch + 1) * spatial;
                match cache.mode {
                    Mode::Eval => {
                        let scale = T::from_f64(gamma * is);
                        for i in range {
                            dx[i] = dy[i] * scale;
                        }
                    }
                    Mode::Train => {
                        let k = gamma * is / count;
                        let mdy = sum_dy[ch];
                        let mdyx = sum_dy_xhat[ch];
                        for i in range {
                            let v = count * dy[i].as_f64() - mdy - cache.xhat[i].as_f64() * mdyx;
                            dx[i] = T::from_f64(k * v);
                        }
                    }
                }
            }
        }
        dx
    }

    fn commit(&mut self, cache: &BnCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for ch in 0..self.channels {
            let rm = self.running_mean[ch].as_f64();
            let rv = self.running_var[ch].as_f64();
            self.running_mean[ch] = T::from_f64((1.0 - m) * rm + m * cache.batch_mean[ch]);
            self.running_var[ch] = T::from_f64((1.0 - m) * rv + m * cache.batch_var_unbiased[ch]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    mode: Mode,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
}

/// Pre-activation residual block: `conv2(relu(bn2(conv1(a)))) + shortcut`, with
/// `a = relu(bn1(x))`.
#[derive(Debug, Clone)]
pub struct PreActBlock<T> {
    pub bn1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Option<Conv2d<T>>,
}

impl<T: Scalar> PreActBlock<T> {
    pub fn new(in_planes: usize, planes: usize, stride: usize) -> Self {
        let shortcut =
            (stride != 1 || in_planes != planes).then(|| Conv2d::zeros(in_planes, planes, 1, stride, 0, false));
        Self {
            bn1: BatchNorm2d::new(in_planes),
            conv1: Conv2d::zeros(in_planes, planes, 3, stride, 1, false),
            bn2: BatchNorm2d::new(planes),
            conv2: Conv2d::zeros(planes, planes, 3, 1, 1, false),
            shortcut,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    bn1: BnCache<T>,
    relu1_mask: Vec<bool>,
    conv1_cols: Vec<T>,
    bn2: BnCache<T>,
    relu2_mask: Vec<bool>,
    conv2_cols: Vec<T>,
    shortcut_cols: Option<Vec<T>>,
    mid_shape: Shape3,
}

/// One stage of a sequential classifier.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    /// Flattens its input.
    Linear(Linear<T>),
    Conv2d(Conv2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    Relu,
    GlobalAvgPool,
    PreActBlock(Box<PreActBlock<T>>),
}

/// Saved intermediates for one layer's backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Linear { input: Vec<T> },
    Conv2d { cols: Vec<T> },
    BatchNorm2d(BnCache<T>),
    Relu { mask: Vec<bool> },
    GlobalAvgPool,
    PreActBlock(Box<BlockCache<T>>),
}

fn relu<T: Scalar>(x: Vec<T>) -> (Vec<T>, Vec<bool>) {
    let mask: Vec<bool> = x.iter().map(|&v| v > T::zero()).collect();
    let y = x
        .into_iter()
        .zip(&mask)
        .map(|(v, &m)| if m { v } else { T::zero() })
        .collect();
    (y, mask)
}

fn relu_back<T: Scalar>(dy: &[T], mask: &[bool]) -> Vec<T> {
    dy.iter()
        .zip(mask)
        .map(|(&d, &m)| if m { d } else { T::zero() })
        .collect()
}

impl<T: Scalar> Layer<T> {
    pub fn output_shape(&self, input: Shape3) -> Shape3 {
        match self {
            Layer::Linear(l) => [l.out_features, 1, 1],
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::BatchNorm2d(_) | Layer::Relu => input,
            Layer::GlobalAvgPool => [input[0], 1, 1],
            Layer::PreActBlock(b) => b.conv2.output_shape(b.conv1.output_shape(input)),
        }
    }

    /// Number of trainable parameter groups; gradients use the same order.
    pub fn param_groups(&self) -> usize {
        match self {
            Layer::Linear(_) | Layer::BatchNorm2d(_) => 2,
            Layer::Conv2d(c) => conv_groups(c),
            Layer::Relu | Layer::GlobalAvgPool => 0,
            Layer::PreActBlock(b) => {
                4 + conv_groups(&b.conv1) + conv_groups(&b.conv2) + b.shortcut.as_ref().map_or(0, conv_groups)
            }
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(c) => conv_params(c),
            Layer::BatchNorm2d(b) => vec![&b.gamma, &b.beta],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
            Layer::PreActBlock(b) => {
                let mut v = vec![&b.bn1.gamma, &b.bn1.beta];
                v.extend(conv_params(&b.conv1));
                v.extend([&b.bn2.gamma, &b.bn2.beta]);
                v.extend(conv_params(&b.conv2));
                if let Some(s) = &b.shortcut {
                    v.extend(conv_params(s));
                }
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(c) => conv_params_mut(c),
            Layer::BatchNorm2d(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
            Layer::PreActBlock(b) => {
                let b = &mut **b;
                let mut v = vec![&mut b.bn1.gamma, &mut b.bn1.beta];
                v.extend(conv_params_mut(&mut b.conv1));
                v.extend([&mut b.bn2.gamma, &mut b.bn2.beta]);
                v.extend(conv_params_mut(&mut b.conv2));
                if let Some(s) = &mut b.shortcut {
                    v.extend(conv_params_mut(s));
                }
                v
            }
        }
    }

    /// Non-trainable state (normalization running statistics).
    pub fn buffers(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::BatchNorm2d(b) => vec![&b.running_mean, &b.running_var],
            Layer::PreActBlock(b) => vec![
                &b.bn1.running_mean,
                &b.bn1.running_var,
                &b.bn2.running_mean,
                &b.bn2.running_var,
            ],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm2d(b) => vec![&mut b.running_mean, &mut b.running_var],
            Layer::PreActBlock(b) => {
                let b = &mut **b;
                vec![
                    &mut b.bn1.running_mean,
                    &mut b.bn1.running_var,
                    &mut b.bn2.running_mean,
                    &mut b.bn2.running_var,
                ]
            }
            _ => vec![],
        }
    }

    pub fn forward(&self, x: Vec<T>, n: usize, input: Shape3, mode: Mode) -> (Vec<T>, LayerCache<T>) {
        match self {
            Layer::Linear(l) => {
                let y = l.forward(&x, n);
                (y, LayerCache::Linear { input: x })
            }
            Layer::Conv2d(c) => {
                let (y, cols) = c.forward(&x, n, input);
                (y, LayerCache::Conv2d { cols })
            }
            Layer::BatchNorm2d(b) => {
                let (y, cache) = b.forward(&x, n, input, mode);
                (y, LayerCache::BatchNorm2d(cache))
            }
            Layer::Relu => {
                let (y, mask) = relu(x);
                (y, LayerCache::Relu { mask })
            }
            Layer::GlobalAvgPool => {
                let spatial = input[1] * input[2];
                let inv = T::from_f64(1.0 / spatial as f64);
                let y = x
                    .chunks_exact(spatial)
                    .map(|s| s.iter().copied().sum::<T>() * inv)
                    .collect();
                (y, LayerCache::GlobalAvgPool)
            }
            Layer::PreActBlock(b) => {
                let (h, bn1) = b.bn1.forward(&x, n, input, mode);
                let (a, relu1_mask) = relu(h);
                let (h, conv1_cols) = b.conv1.forward(&a, n, input);
                let mid_shape = b.conv1.output_shape(input);
                let (h, bn2) = b.bn2.forward(&h, n, mid_shape, mode);
                let (h, relu2_mask) = relu(h);
                let (mut out, conv2_cols) = b.conv2.forward(&h, n, mid_shape);
                let shortcut_cols = match &b.shortcut {
                    Some(s) => {
                        let (sc, cols) = s.forward(&a, n, input);
                        for (o, v) in out.iter_mut().zip(sc) {
                            *o = *o + v;
                        }
                        Some(cols)
                    }
                    None => {
                        for (o, &v) in out.iter_mut().zip(&x) {
                            *o = *o + v;
                        }
                        None
                    }
                };
                (
                    out,
                    LayerCache::PreActBlock(Box::new(BlockCache {
                        bn1,
                        relu1_mask,
                        conv1_cols,
                        bn2,
                        relu2_mask,
                        conv2_cols,
                        shortcut_cols,
                        mid_shape,
                    })),
                )
            }
        }
    }

    pub fn backward(
        &self,
        cache: &LayerCache<T>,
        dy: &[T],
        n: usize,
        input: Shape3,
        grads: Option<&mut [Vec<T>]>,
    ) -> Vec<T> {
        match (self, cache) {
            (Layer::Linear(l), LayerCache::Linear { input: x }) => l.backward(x, dy, n, grads),
            (Layer::Conv2d(c), LayerCache::Conv2d { cols }) => c.backward(cols, dy, n, input, grads),
            (Layer::BatchNorm2d(b), LayerCache::BatchNorm2d(bc)) => b.backward(bc, dy, n, input, grads),
            (Layer::Relu, LayerCache::Relu { mask }) => relu_back(dy, mask),
            (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool) => {
                let spatial = input[1] * input[2];
                let inv = T::from_f64(1.0 / spatial as f64);
                dy.iter()
                    .flat_map(|&d| std::iter::repeat_n(d * inv, spatial))
                    .collect()
            }
            (Layer::PreActBlock(b), LayerCache::PreActBlock(bc)) => {
                let conv1_groups = conv_groups(&b.conv1);
                let conv2_groups = conv_groups(&b.conv2);
                let mut slots: Vec<Option<&mut [Vec<T>]>> = match grads {
                    Some(g) => {
                        let (bn1, rest) = g.split_at_mut(2);
                        let (c1, rest) = rest.split_at_mut(conv1_groups);
                        let (bn2, rest) = rest.split_at_mut(2);
                        let (c2, sc) = rest.split_at_mut(conv2_groups);
                        vec![Some(bn1), Some(c1), Some(bn2), Some(c2), Some(sc)]
                    }
                    None => (0..5).map(|_| None).collect(),
                };
                let mut take = |i: usize| slots[i].take();
                let d = b.conv2.backward(&bc.conv2_cols, dy, n, bc.mid_shape, take(3));
                let d = relu_back(&d, &bc.relu2_mask);
                let d = b.bn2.backward(&bc.bn2, &d, n, bc.mid_shape, take(2));
                let mut da = b.conv1.backward(&bc.conv1_cols, &d, n, input, take(1));
                let sc_slot = take(4);
                let residual = match (&b.shortcut, &bc.shortcut_cols) {
                    (Some(s), Some(cols)) => {
                        let ds = s.backward(cols, dy, n, input, sc_slot);
                        for (a, v) in da.iter_mut().zip(ds) {
                            *a = *a + v;
                        }
                        None
                    }
                    _ => Some(dy),
                };
                let d = relu_back(&da, &bc.relu1_mask);
                let mut dx = b.bn1.backward(&bc.bn1, &d, n, input, take(0));
                if let Some(r) = residual {
                    for (x, &v) in dx.iter_mut().zip(r) {
                        *x = *x + v;
                    }
                }
                dx
            }
            _ => panic!("layer cache does not match layer kind"),
        }
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn commit_statistics(&mut self, cache: &LayerCache<T>) {
        match (self, cache) {
            (Layer::BatchNorm2d(b), LayerCache::BatchNorm2d(bc)) => b.commit(bc),
            (Layer::PreActBlock(b), LayerCache::PreActBlock(bc)) => {
                b.bn1.commit(&bc.bn1);
                b.bn2.commit(&bc.bn2);
            }
            _ => {}
        }
    }
}

fn conv_groups<T>(c: &Conv2d<T>) -> usize {
    1 + usize::from(c.bias.is_some())
}

fn conv_params<T>(c: &Conv2d<T>) -> Vec<&Vec<T>> {
    let mut v = vec![&c.weight];
    if let Some(b) = &c.bias {
        v.push(b);
    }
    v
}

fn conv_params_mut<T>(c: &mut Conv2d<T>) -> Vec<&mut Vec<T>> {
    let mut v = vec![&mut c.weight];
    if let Some(b) = &mut c.bias {
        v.push(b);
    }
    v
}
