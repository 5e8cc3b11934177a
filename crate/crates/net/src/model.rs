//! The configurable 3D CNN: conv blocks, a readout and a fully connected head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{expect_channels, BatchNorm3d, Conv3d, Dropout, Flatten, GlobalAvgPool, Linear, MaxPool3d, Relu};
use crate::tensor::Tensor;
use crate::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub batch_norm: bool,
    pub relu: bool,
    /// 2× max pooling after the block.
    pub pool: bool,
}

impl ConvBlockConfig {
    pub fn standard(out_channels: usize, pool: bool) -> Self {
        Self {
            out_channels,
            batch_norm: true,
            relu: true,
            pool,
        }
    }
}

/// How the last feature map reaches the fully connected head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Flatten,
    GlobalAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Spatial input extent as `(D, H, W)`.
    pub input_dims: [usize; 3],
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub readout: Readout,
    /// Widths of the fully connected layers; the last is the class count.
    pub fc: Vec<usize>,
    /// Dropout after the first fully connected layer (when there are two or more).
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_input(1, [32, 32, 32])
    }
}

impl ModelConfig {
    /// The default schedule: three pooled and two unpooled blocks of 10
    /// channels, flatten, FC(360) with dropout 0.5, FC(4). Two-channel (fused)
    /// inputs get two extra unpooled blocks.
    pub fn for_input(input_channels: usize, input_dims: [usize; 3]) -> Self {
        let mut conv_blocks = vec![
            ConvBlockConfig::standard(10, true),
            ConvBlockConfig::standard(10, true),
            ConvBlockConfig::standard(10, true),
            ConvBlockConfig::standard(10, false),
            ConvBlockConfig::standard(10, false),
        ];
        if input_channels > 1 {
            conv_blocks.push(ConvBlockConfig::standard(10, false));
            conv_blocks.push(ConvBlockConfig::standard(10, false));
        }
        Self {
            input_channels,
            input_dims,
            conv_blocks,
            readout: Readout::Flatten,
            fc: vec![360, 4],
            dropout: 0.5,
            num_classes: 4,
        }
    }

    /// Feature-map shape `(C, D, H, W)` after the last conv block.
    pub fn feature_shape(&self) -> [usize; 4] {
        let mut dims = self.input_dims;
        let mut channels = self.input_channels;
        for b in &self.conv_blocks {
            channels = b.out_channels;
            if b.pool {
                dims = dims.map(|v| v / 2);
            }
        }
        [channels, dims[0], dims[1], dims[2]]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.conv_blocks.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.input_channels == 0 || self.conv_blocks.iter().any(|b| b.out_channels == 0) {
            return bad("channel counts must be positive".into());
        }
        if self.fc.last() != Some(&self.num_classes) {
            return bad(format!(
                "last fully connected width {:?} must equal num_classes {}",
                self.fc.last(),
                self.num_classes
            ));
        }
        if self.fc.contains(&0) {
            return bad("fully connected widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        let [_, d, h, w] = self.feature_shape();
        if d == 0 || h == 0 || w == 0 {
            return bad(format!(
                "input {:?} does not survive the pooling schedule",
                self.input_dims
            ));
        }
        Ok(())
    }

    fn readout_features(&self) -> usize {
        let [c, d, h, w] = self.feature_shape();
        match self.readout {
            Readout::Flatten => c * d * h * w,
            Readout::GlobalAverage => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv3d),
    BatchNorm(BatchNorm3d),
    Relu(Relu),
    Pool(MaxPool3d),
    GlobalAvg(GlobalAvgPool),
    Flatten(Flatten),
    Linear(Linear),
    Dropout(Dropout),
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<(String, Layer)>,
    /// Per conv block, the layer whose output is the block activation
    /// (before pooling).
    taps: Vec<usize>,
    record: bool,
    activations: Vec<Option<Tensor>>,
    activation_grads: Vec<Option<Tensor>>,
    rng: ChaCha8Rng,
}

impl Model {
    /// He-uniform weights, zero biases, identity batch norm; `seed` fixes the
    /// weights and the dropout stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut channels = config.input_channels;
        for (b, block) in config.conv_blocks.iter().enumerate() {
            let name = |s: &str| format!("block {} {s}", b + 1);
            layers.push((
                name("conv"),
                Layer::Conv(Conv3d::new(channels, block.out_channels, !block.batch_norm, &mut rng)),
            ));
            if block.batch_norm {
                layers.push((
                    name("batch norm"),
                    Layer::BatchNorm(BatchNorm3d::new(block.out_channels)),
                ));
            }
            if block.relu {
                layers.push((name("relu"), Layer::Relu(Relu::default())));
            }
            taps.push(layers.len() - 1);
            if block.pool {
                layers.push((name("max pool"), Layer::Pool(MaxPool3d::new(2))));
            }
            channels = block.out_channels;
        }
        match config.readout {
            Readout::Flatten => layers.push(("flatten".into(), Layer::Flatten(Flatten::default()))),
            Readout::GlobalAverage => {
                layers.push(("global average".into(), Layer::GlobalAvg(GlobalAvgPool::default())))
            }
        }
        let mut width = config.readout_features();
        let n_fc = config.fc.len();
        for (i, &out) in config.fc.iter().enumerate() {
            layers.push((
                format!("fc {}", i + 1),
                Layer::Linear(Linear::new(width, out, &mut rng)),
            ));
            if i + 1 < n_fc {
                layers.push((format!("fc {} relu", i + 1), Layer::Relu(Relu::default())));
                if i == 0 {
                    layers.push(("dropout".into(), Layer::Dropout(Dropout::new(config.dropout))));
                }
            }
            width = out;
        }
        let n_blocks = taps.len();
        Ok(Self {
            config,
            layers,
            taps,
            record: false,
            activations: vec![None; n_blocks],
            activation_grads: vec![None; n_blocks],
            rng,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_blocks(&self) -> usize {
        self.taps.len()
    }

    /// Keep block activations (forward) and their gradients (backward).
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
        if !on {
            self.activations.iter_mut().for_each(|a| *a = None);
            self.activation_grads.iter_mut().for_each(|a| *a = None);
        }
    }

    /// Output of conv block `b` (0-based, before pooling) from the last
    /// recorded forward pass.
    pub fn block_activation(&self, b: usize) -> Option<&Tensor> {
        self.activations.get(b)?.as_ref()
    }

    /// Gradient with respect to [`Model::block_activation`] from the last
    /// recorded backward pass.
    pub fn block_gradient(&self, b: usize) -> Option<&Tensor> {
        self.activation_grads.get(b)?.as_ref()
    }

    /// Logits `(N, num_classes)`; no softmax.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NetError> {
        expect_channels("input", x, self.config.input_channels)?;
        let dims = x.dims5().unwrap();
        if dims[2..] != self.config.input_dims {
            return Err(NetError::Shape(format!(
                "input: expected spatial extent {:?}, got {:?}",
                self.config.input_dims,
                &dims[2..]
            )));
        }
        let train = mode == Mode::Train;
        let mut h = x.clone();
        for (i, (name, layer)) in self.layers.iter_mut().enumerate() {
            h = match layer {
                Layer::Conv(c) => {
                    expect_channels(name, &h, c.in_channels)?;
                    c.forward(h)
                }
                Layer::BatchNorm(bn) => bn.forward(h, train),
                Layer::Relu(r) => r.forward(h),
                Layer::Pool(p) => p.forward(h),
                Layer::GlobalAvg(g) => g.forward(h),
                Layer::Flatten(f) => f.forward(h),
                Layer::Linear(l) => {
                    if h.shape().get(1) != Some(&l.in_features) {
                        return Err(NetError::Shape(format!(
                            "{name}: expected {} features, got {:?}",
                            l.in_features,
                            h.shape()
                        )));
                    }
                    l.forward(h)
                }
                Layer::Dropout(d) => d.forward(h, train, &mut self.rng),
            };
            if self.record {
                if let Some(b) = self.taps.iter().position(|&t| t == i) {
                    self.activations[b] = Some(h.clone());
                }
            }
        }
        if !h.all_finite() {
            return Err(NetError::NonFinite("logits".into()));
        }
        Ok(h)
    }

    /// Backpropagate `∂loss/∂logits` through the last forward pass;
    /// parameter gradients accumulate and the input gradient is returned.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor, NetError> {
        let g = self.backward_to(grad_logits, 0);
        if !g.all_finite() {
            return Err(NetError::NonFinite("input gradient".into()));
        }
        Ok(g)
    }

    /// As [`Model::backward`] without the input gradient, which saves one
    /// transposed convolution per step in training.
    pub fn backward_params(&mut self, grad_logits: &Tensor) -> Result<(), NetError> {
        let g = self.backward_to(grad_logits, 1);
        match &mut self.layers[0].1 {
            Layer::Conv(c) => c.backward_params(&g),
            _ => unreachable!("the first layer is a convolution"),
        }
        if !g.all_finite() {
            return Err(NetError::NonFinite("gradients".into()));
        }
        Ok(())
    }

    /// Run the backward pass down to (and including) layer `stop`.
    fn backward_to(&mut self, grad_logits: &Tensor, stop: usize) -> Tensor {
        let mut g = grad_logits.clone();
        for i in (stop..self.layers.len()).rev() {
            if self.record {
                if let Some(b) = self.taps.iter().position(|&t| t == i) {
                    self.activation_grads[b] = Some(g.clone());
                }
            }
            g = match &mut self.layers[i].1 {
                Layer::Conv(c) => c.backward(g),
                Layer::BatchNorm(bn) => bn.backward(g),
                Layer::Relu(r) => r.backward(g),
                Layer::Pool(p) => p.backward(g),
                Layer::GlobalAvg(p) => p.backward(g),
                Layer::Flatten(f) => f.backward(g),
                Layer::Linear(l) => l.backward(g),
                Layer::Dropout(d) => d.backward(g),
            };
        }
        g
    }

    /// Trainable tensors in declaration order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (_, layer) in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    if let Some(b) = &mut c.bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.state()
            .into_iter()
            .filter(|(_, trainable)| *trainable)
            .map(|(t, _)| t)
            .collect()
    }

    /// Every stored tensor in declaration order, flagged trainable or not
    /// (batch-norm running statistics are not).
    pub fn state(&self) -> Vec<(&Tensor, bool)> {
        let mut out = Vec::new();
        for (_, layer) in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push((&c.weight, true));
                    if let Some(b) = &c.bias {
                        out.push((b, true));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((&bn.gamma, true));
                    out.push((&bn.beta, true));
                    out.push((&bn.running_mean, false));
                    out.push((&bn.running_var, false));
                }
                Layer::Linear(l) => {
                    out.push((&l.weight, true));
                    out.push((&l.bias, true));
                }
                _ => {}
            }
        }
        out
    }

    pub(crate) fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (_, layer) in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    if let Some(b) = &mut c.bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                    out.push(&mut bn.running_mean);
                    out.push(&mut bn.running_var);
                }
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Layer names in execution order.
    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }
}
