//! Sequential classifiers and their reference architectures.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{volume, BatchNorm2d, Conv2d, Layer, LayerCache, Linear, Mode, PreActBlock, Shape3};
use super::loss;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named reference architecture plus its input shape and class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    /// Single affine map from flattened input to logits.
    Linear { input: Shape3, num_classes: usize },
    /// Linear, ReLU, Linear.
    Mlp {
        input: Shape3,
        hidden: usize,
        num_classes: usize,
    },
    /// Three stride-2 conv/batch-norm/ReLU blocks with widths `w, 2w, 4w`,
    /// then a linear head.
    SmallCnn {
        input: Shape3,
        width: usize,
        num_classes: usize,
    },
    PreActResNet18 { input: Shape3, num_classes: usize },
}

impl Architecture {
    pub fn input_shape(&self) -> Shape3 {
        match *self {
            Architecture::Linear { input, .. }
            | Architecture::Mlp { input, .. }
            | Architecture::SmallCnn { input, .. }
            | Architecture::PreActResNet18 { input, .. } => input,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Architecture::Linear { num_classes, .. }
            | Architecture::Mlp { num_classes, .. }
            | Architecture::SmallCnn { num_classes, .. }
            | Architecture::PreActResNet18 { num_classes, .. } => num_classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Linear { .. } => "linear",
            Architecture::Mlp { .. } => "mlp",
            Architecture::SmallCnn { .. } => "small-cnn",
            Architecture::PreActResNet18 { .. } => "pre-act-res-net18",
        }
    }

    fn build<T: Scalar>(&self) -> Result<Vec<Layer<T>>> {
        let input = self.input_shape();
        if volume(input) == 0 || self.num_classes() < 2 {
            return Err(Error::Config(format!(
                "architecture {} needs a non-empty input and at least two classes",
                self.name()
            )));
        }
        let k = self.num_classes();
        let layers = match *self {
            Architecture::Linear { .. } => vec![Layer::Linear(Linear::zeros(volume(input), k))],
            Architecture::Mlp { hidden, .. } => vec![
                Layer::Linear(Linear::zeros(volume(input), hidden)),
                Layer::Relu,
                Layer::Linear(Linear::zeros(hidden, k)),
            ],
            Architecture::SmallCnn { width, .. } => {
                let mut layers = Vec::new();
                let mut shape = input;
                for out in [width, 2 * width, 4 * width] {
                    let conv = Conv2d::zeros(shape[0], out, 3, 2, 1, true);
                    shape = conv.output_shape(shape);
                    layers.push(Layer::Conv2d(conv));
                    layers.push(Layer::BatchNorm2d(BatchNorm2d::new(out)));
                    layers.push(Layer::Relu);
                }
                layers.push(Layer::Linear(Linear::zeros(volume(shape), k)));
                layers
            }
            Architecture::PreActResNet18 { .. } => {
                let mut layers = vec![Layer::Conv2d(Conv2d::zeros(input[0], 64, 3, 1, 1, false))];
                let mut in_planes = 64;
                for (planes, stride) in [(64, 1), (128, 2), (256, 2), (512, 2)] {
                    for s in [stride, 1] {
                        layers.push(Layer::PreActBlock(Box::new(PreActBlock::new(in_planes, planes, s))));
                        in_planes = planes;
                    }
                }
                layers.push(Layer::BatchNorm2d(BatchNorm2d::new(512)));
                layers.push(Layer::Relu);
                layers.push(Layer::GlobalAvgPool);
                layers.push(Layer::Linear(Linear::zeros(512, k)));
                layers
            }
        };
        let mut shape = input;
        for l in &layers {
            shape = l.output_shape(shape);
            if shape[1] == 0 || shape[2] == 0 {
                return Err(Error::Config(format!("input {input:?} too small for {}", self.name())));
            }
        }
        Ok(layers)
    }
}

/// Per-parameter-group gradients, in the order of [`Classifier::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Classifier<T>) -> Self {
        Gradients(model.params().iter().map(|p| vec![T::zero(); p.len()]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Saved forward state needed by [`Classifier::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    n: usize,
    shapes: Vec<Shape3>,
    caches: Vec<LayerCache<T>>,
}

/// Result of a weighted cross-entropy evaluation with parameter gradients.
#[derive(Debug, Clone)]
pub struct WeightedLoss<T> {
    /// `sum_i w_i * loss_i / normalizer`.
    pub loss: f64,
    pub per_example: Vec<f64>,
    pub gradients: Gradients<T>,
    pub tape: Tape<T>,
}

/// Differentiable image classifier.
#[derive(Debug)]
pub struct Classifier<T> {
    architecture: Architecture,
    layers: Vec<Layer<T>>,
    input_gradient_evaluations: AtomicU64,
}

impl<T: Clone> Clone for Classifier<T> {
    fn clone(&self) -> Self {
        Self {
            architecture: self.architecture.clone(),
            layers: self.layers.clone(),
            input_gradient_evaluations: AtomicU64::new(self.input_gradient_evaluations.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Scalar> Classifier<T> {
    /// All parameters zero; normalization layers at identity.
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let layers = architecture.build()?;
        Ok(Self {
            architecture,
            layers,
            input_gradient_evaluations: AtomicU64::new(0),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = |weight: &mut Vec<T>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in weight.iter_mut() {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        };
        let init_conv = |c: &mut Conv2d<T>, rng: &mut ChaCha8Rng| {
            let fan_in = c.in_channels * c.kernel * c.kernel;
            init(&mut c.weight, fan_in, rng);
            if let Some(b) = &mut c.bias {
                init(b, fan_in, rng);
            }
        };
        for layer in &mut model.layers {
            match layer {
                Layer::Linear(l) => {
                    init(&mut l.weight, l.in_features, &mut rng);
                    init(&mut l.bias, l.in_features, &mut rng);
                }
                Layer::Conv2d(c) => init_conv(c, &mut rng),
                Layer::PreActBlock(b) => {
                    init_conv(&mut b.conv1, &mut rng);
                    init_conv(&mut b.conv2, &mut rng);
                    if let Some(s) = &mut b.shortcut {
                        init_conv(s, &mut rng);
                    }
                }
                _ => {}
            }
        }
        Ok(model)
    }

    /// Single affine layer with the given `num_classes x input_len` weights.
    pub fn linear(input: Shape3, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let num_classes = bias.len();
        let mut model = Self::zeros(Architecture::Linear { input, num_classes })?;
        if weight.len() != num_classes * volume(input) {
            return Err(Error::Shape(format!(
                "linear weight has {} entries, expected {}",
                weight.len(),
                num_classes * volume(input)
            )));
        }
        if let Layer::Linear(l) = &mut model.layers[0] {
            l.weight = weight;
            l.bias = bias;
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn num_classes(&self) -> usize {
        self.architecture.num_classes()
    }

    pub fn input_shape(&self) -> Shape3 {
        self.architecture.input_shape()
    }

    pub fn input_len(&self) -> usize {
        volume(self.input_shape())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Flattened copy of all parameters.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().into_iter().flatten().copied().collect()
    }

    /// Number of per-example input gradients computed so far.
    pub fn gradient_evaluations(&self) -> u64 {
        self.input_gradient_evaluations.load(Ordering::Relaxed)
    }

    fn batch_size(&self, images: &[T]) -> Result<usize> {
        let len = self.input_len();
        if images.is_empty() || images.len() % len != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a whole batch of {:?} images for {}",
                images.len(),
                self.input_shape(),
                self.architecture.name()
            )));
        }
        Ok(images.len() / len)
    }

    /// Batch logits, flat with stride `num_classes`.
    pub fn forward_flat(&self, images: &[T], mode: Mode) -> Result<Vec<T>> {
        Ok(self.forward_tape(images, mode)?.0)
    }

    /// One logits vector per image.
    pub fn forward(&self, images: &[T], mode: Mode) -> Result<Vec<Vec<T>>> {
        let k = self.num_classes();
        Ok(self
            .forward_flat(images, mode)?
            .chunks_exact(k)
            .map(<[T]>::to_vec)
            .collect())
    }

    pub fn forward_tape(&self, images: &[T], mode: Mode) -> Result<(Vec<T>, Tape<T>)> {
        let n = self.batch_size(images)?;
        debug_assert!(
            images.iter().all(|v| *v >= T::zero() && *v <= T::one()),
            "image values must lie in [0, 1]"
        );
        let mut shape = self.input_shape();
        let mut x = images.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shapes.push(shape);
            let (y, cache) = layer.forward(x, n, shape, mode);
            caches.push(cache);
            shape = layer.output_shape(shape);
            x = y;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok((x, Tape { n, shapes, caches }))
    }

    /// Back-propagates `dlogits`; returns the input gradient and, optionally,
    /// parameter gradients.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &[T], with_params: bool) -> (Vec<T>, Option<Gradients<T>>) {
        let mut grads = with_params.then(|| Gradients::zeros_like(self));
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_groups();
        }
        let mut d = dlogits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let slot = grads
                .as_mut()
                .map(|g| &mut g.0[offsets[i]..offsets[i] + layer.param_groups()]);
            d = layer.backward(&tape.caches[i], &d, tape.n, tape.shapes[i], slot);
        }
        (d, grads)
    }

    /// Folds the tape's train-mode batch statistics into running statistics.
    pub fn commit_statistics(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            layer.commit_statistics(cache);
        }
    }

    /// Eval-mode logits and per-example cross-entropy input gradients.
    pub fn input_gradients(&self, images: &[T], labels: &[usize]) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.batch_size(images)?;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} images", labels.len())));
        }
        let k = self.num_classes();
        let (logits, tape) = self.forward_tape(images, Mode::Eval)?;
        let mut dlogits = Vec::with_capacity(n * k);
        for (row, &y) in logits.chunks_exact(k).zip(labels) {
            dlogits.extend(loss::cross_entropy_grad(row, y)?.into_iter().map(T::from_f64));
        }
        let (dx, _) = self.backward(&tape, &dlogits, false);
        self.input_gradient_evaluations.fetch_add(n as u64, Ordering::Relaxed);
        Ok((logits, dx))
    }

    /// Gradient of `cross_entropy(forward(image), label)` w.r.t. the image.
    pub fn input_gradient(&self, image: &[T], label: usize) -> Result<Vec<T>> {
        if image.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "image has {} values, expected {}",
                image.len(),
                self.input_len()
            )));
        }
        Ok(self.input_gradients(image, &[label])?.1)
    }

    /// `sum_i weights[i] * CE_i / normalizer` and its parameter gradients.
    ///
    /// In train mode, batch norm statistics see every image, so a zero
    /// weight is not the same as leaving the example out. Callers that drop
    /// examples pass only the kept ones.
    pub fn weighted_loss(
        &self,
        images: &[T],
        labels: &[usize],
        weights: &[f64],
        normalizer: f64,
        mode: Mode,
    ) -> Result<WeightedLoss<T>> {
        let n = self.batch_size(images)?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::Shape(format!(
                "{} labels / {} weights for {n} images",
                labels.len(),
                weights.len()
            )));
        }
        if !(normalizer > 0.0) {
            return Err(Error::Config(format!("loss normalizer must be positive, got {normalizer}")));
        }
        let k = self.num_classes();
        let (logits, tape) = self.forward_tape(images, mode)?;
        let mut per_example = Vec::with_capacity(n);
        let mut dlogits = Vec::with_capacity(n * k);
        let mut total = 0.0;
        for ((row, &y), &w) in logits.chunks_exact(k).zip(labels).zip(weights) {
            let l = loss::cross_entropy(row, y)?;
            per_example.push(l);
            total += w * l;
            let scale = w / normalizer;
            dlogits.extend(loss::cross_entropy_grad(row, y)?.into_iter().map(|g| T::from_f64(g * scale)));
        }
        let loss = total / normalizer;
        if !loss.is_finite() {
            return Err(Error::NonFinite("weighted loss".into()));
        }
        let (_, grads) = self.backward(&tape, &dlogits, true);
        Ok(WeightedLoss {
            loss,
            per_example,
            gradients: grads.expect("parameter gradients requested"),
            tape,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> Architecture {
        Architecture::Mlp {
            input: [1, 3, 2],
            hidden: 5,
            num_classes: 3,
        }
    }

    #[test]
    fn zero_weight_linear_model_outputs_zero_logits() {
        let m = Classifier::<f64>::zeros(Architecture::Linear {
            input: [1, 2, 1],
            num_classes: 2,
        })
        .unwrap();
        assert_eq!(m.forward(&[0.3, 0.9], Mode::Eval).unwrap(), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn identity_linear_model_copies_input() {
        let m = Classifier::<f64>::linear([1, 2, 1], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[0.3, 0.7], Mode::Eval).unwrap(), vec![vec![0.3, 0.7]]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = Classifier::<f32>::new(mlp(), 0).unwrap();
        assert!(matches!(m.forward(&[0.0; 5], Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn parameter_count_matches_descriptor() {
        let m = Classifier::<f32>::new(mlp(), 0).unwrap();
        assert_eq!(m.parameter_count(), 6 * 5 + 5 + 5 * 3 + 3);
        let cnn = Classifier::<f32>::new(
            Architecture::SmallCnn {
                input: [1, 28, 28],
                width: 8,
                num_classes: 10,
            },
            0,
        )
        .unwrap();
        let convs = (9 * 8 + 8) + (8 * 9 * 16 + 16) + (16 * 9 * 32 + 32);
        let bns = 2 * (8 + 16 + 32);
        assert_eq!(cnn.parameter_count(), convs + bns + 32 * 4 * 4 * 10 + 10);
    }

    #[test]
    fn resnet_has_expected_parameter_count() {
        let m = Classifier::<f32>::zeros(Architecture::PreActResNet18 {
            input: [3, 32, 32],
            num_classes: 10,
        })
        .unwrap();
        // PreAct-ResNet-18 (bias-free convolutions, final BN) on 10 classes.
        assert_eq!(m.parameter_count(), 11_172_170);
    }

    #[test]
    fn forward_is_deterministic_per_mode() {
        let m = Classifier::<f32>::new(
            Architecture::SmallCnn {
                input: [1, 8, 8],
                width: 2,
                num_classes: 3,
            },
            3,
        )
        .unwrap();
        let x: Vec<f32> = (0..128).map(|i| (i % 17) as f32 / 17.0).collect();
        for mode in [Mode::Eval, Mode::Train] {
            assert_eq!(m.forward_flat(&x, mode).unwrap(), m.forward_flat(&x, mode).unwrap());
        }
        assert_ne!(
            m.forward_flat(&x, Mode::Eval).unwrap(),
            m.forward_flat(&x, Mode::Train).unwrap()
        );
    }

    #[test]
    fn binary_linear_gradient_has_closed_form() {
        let w = vec![0.5, -1.0, 2.0, 0.25];
        let m = Classifier::<f64>::linear([1, 2, 1], w.clone(), vec![0.1, -0.2]).unwrap();
        let x = [0.4, 0.8];
        let logits = [0.5 * 0.4 - 0.8 + 0.1, 2.0 * 0.4 + 0.25 * 0.8 - 0.2];
        let p = loss::softmax(&logits);
        let y = 1;
        let r = [p[0], p[1] - 1.0];
        let expected = [r[0] * w[0] + r[1] * w[2], r[0] * w[1] + r[1] * w[3]];
        let g = m.input_gradient(&x, y).unwrap();
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_has_zero_input_gradient() {
        let m = Classifier::<f64>::zeros(mlp()).unwrap();
        assert!(m.input_gradient(&[0.5; 6], 2).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_counter_counts_examples() {
        let m = Classifier::<f32>::new(mlp(), 1).unwrap();
        m.input_gradients(&[0.5; 18], &[0, 1, 2]).unwrap();
        assert_eq!(m.gradient_evaluations(), 3);
    }
}
