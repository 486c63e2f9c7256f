//! Parameter registry and the network building blocks: convolutions,
//! residual blocks, channel squeeze, event-guided attention, and the
//! recurrent cell.
//!
//! Layers hold parameter ids, not values. A forward pass first leafs every
//! parameter onto a fresh tape (in registration order) and layers index into
//! that slice, so gradients line up with the store.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// Index of a parameter in its store's registration order.
pub type ParamId = usize;

/// Negative slope of the network-wide leaky activation.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Kaiming-uniform weights: bound sqrt(6 / fan_in).
    pub fn register_conv_weight(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.register(name, Tensor::new(shape, data))
    }

    pub fn register_zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    /// Copies every parameter under `src_prefix` onto its counterpart under
    /// `dst_prefix`. Panics if a counterpart is missing: tying is an
    /// initialization-time contract, not a runtime condition.
    pub fn tie_prefix(&mut self, dst_prefix: &str, src_prefix: &str) {
        let pairs: Vec<(ParamId, ParamId)> = (0..self.names.len())
            .filter_map(|src| {
                let suffix = self.names[src].strip_prefix(src_prefix)?;
                let dst_name = format!("{dst_prefix}{suffix}");
                let dst = self
                    .id_of(&dst_name)
                    .unwrap_or_else(|| panic!("tie_prefix: no parameter named {dst_name:?}"));
                Some((dst, src))
            })
            .collect();
        assert!(!pairs.is_empty(), "tie_prefix: nothing matches {src_prefix:?}");
        for (dst, src) in pairs {
            self.tie(dst, src);
        }
    }

    /// Copies values of parameter `src` into `dst` (shapes must match).
    pub fn tie(&mut self, dst: ParamId, src: ParamId) {
        assert_eq!(
            self.tensors[dst].shape, self.tensors[src].shape,
            "tie: {:?} vs {:?}",
            self.tensors[dst].shape, self.tensors[src].shape
        );
        let data = self.tensors[src].data.clone();
        self.tensors[dst].data = data;
    }

    /// Leafs every parameter onto the tape in registration order.
    pub fn leaf_all(&self, tape: &mut Tape) -> Vec<Value> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv2dLayer {
        let weight = store.register_conv_weight(
            &format!("{name}.weight"),
            vec![c_out, c_in, k, k],
            c_in * k * k,
            rng,
        );
        let bias = store.register_zeros(&format!("{name}.bias"), vec![c_out]);
        Conv2dLayer {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Value], x: Value) -> Value {
        tape.conv2d(x, params[self.weight], params[self.bias], self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    stride: usize,
    pad: usize,
}

impl ConvTranspose2dLayer {
    /// k=4, s=2, p=1: exact 2x spatial upsampling.
    pub fn upsample2x(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> ConvTranspose2dLayer {
        let weight = store.register_conv_weight(
            &format!("{name}.weight"),
            vec![c_in, c_out, 4, 4],
            c_in * 16,
            rng,
        );
        let bias = store.register_zeros(&format!("{name}.bias"), vec![c_out]);
        ConvTranspose2dLayer {
            weight,
            bias,
            stride: 2,
            pad: 1,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Value], x: Value) -> Value {
        tape.conv_transpose2d(x, params[self.weight], params[self.bias], self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> DenseLayer {
        let weight = store.register_conv_weight(
            &format!("{name}.weight"),
            vec![out_dim, in_dim],
            in_dim,
            rng,
        );
        let bias = store.register_zeros(&format!("{name}.bias"), vec![out_dim]);
        DenseLayer { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Value], x: Value) -> Value {
        tape.dense(x, params[self.weight], params[self.bias])
    }
}

/// x + conv(act(conv(x))), both convs 3x3 stride 1.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
    ) -> ResidualBlock {
        ResidualBlock {
            conv1: Conv2dLayer::new(store, rng, &format!("{name}.conv1"), channels, channels, 3, 1, 1),
            conv2: Conv2dLayer::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, 1, 1),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Value], x: Value) -> Value {
        let h = self.conv1.forward(tape, params, x);
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv2.forward(tape, params, h);
        tape.add(x, h)
    }
}

/// SE-style channel attention: pooled stats -> bottleneck -> per-channel
/// weights in (0, 1).
#[derive(Debug, Clone)]
pub struct ChannelSqueeze {
    reduce: DenseLayer,
    expand: DenseLayer,
}

impl ChannelSqueeze {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> ChannelSqueeze {
        assert!(
            channels % reduction == 0,
            "channel squeeze: {channels} channels not divisible by reduction {reduction}"
        );
        ChannelSqueeze {
            reduce: DenseLayer::new(store, rng, &format!("{name}.reduce"), channels, channels / reduction),
            expand: DenseLayer::new(store, rng, &format!("{name}.expand"), channels / reduction, channels),
        }
    }

    /// (C, H, W) -> (C,) weights.
    pub fn forward(&self, tape: &mut Tape, params: &[Value], feat: Value) -> Value {
        let pooled = tape.global_avg_pool(feat);
        let h = self.reduce.forward(tape, params, pooled);
        let h = tape.relu(h);
        let h = self.expand.forward(tape, params, h);
        tape.sigmoid(h)
    }
}

/// Event-guided attention: both channel-weight vectors come from the event
/// features; one gates the events themselves, the other gates the image
/// features, and a 1x1-conv FFN mixes the gated concat back to C channels.
#[derive(Debug, Clone)]
pub struct Egaca {
    cs_self: ChannelSqueeze,
    cs_cross: Option<ChannelSqueeze>,
    ffn1: Conv2dLayer,
    ffn2: Conv2dLayer,
}

impl Egaca {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
        shared_cs: bool,
    ) -> Egaca {
        let cs_self = ChannelSqueeze::new(store, rng, &format!("{name}.cs_self"), channels, reduction);
        let cs_cross = if shared_cs {
            None
        } else {
            Some(ChannelSqueeze::new(store, rng, &format!("{name}.cs_cross"), channels, reduction))
        };
        Egaca {
            cs_self,
            cs_cross,
            ffn1: Conv2dLayer::new(store, rng, &format!("{name}.ffn1"), 2 * channels, channels, 1, 1, 0),
            ffn2: Conv2dLayer::new(store, rng, &format!("{name}.ffn2"), channels, channels, 1, 1, 0),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Value],
        event_feat: Value,
        image_feat: Value,
    ) -> Value {
        let w_self = self.cs_self.forward(tape, params, event_feat);
        let w_cross = match &self.cs_cross {
            Some(cs) => cs.forward(tape, params, event_feat),
            None => self.cs_self.forward(tape, params, event_feat),
        };
        let gated_events = tape.scale_channels(event_feat, w_self);
        let gated_image = tape.scale_channels(image_feat, w_cross);
        let joint = tape.concat(gated_events, gated_image);
        let h = self.ffn1.forward(tape, params, joint);
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.ffn2.forward(tape, params, h)
    }
}

/// Recurrent cell: concat(x, h) -> reducing conv -> residual blocks ->
/// features out; the new state is conv+activation of the features.
#[derive(Debug, Clone)]
pub struct EvrCell {
    reduce: Conv2dLayer,
    blocks: Vec<ResidualBlock>,
    state_conv: Conv2dLayer,
}

impl EvrCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        residual_blocks: usize,
    ) -> EvrCell {
        EvrCell {
            reduce: Conv2dLayer::new(store, rng, &format!("{name}.reduce"), 2 * channels, channels, 3, 1, 1),
            blocks: (0..residual_blocks)
                .map(|i| ResidualBlock::new(store, rng, &format!("{name}.res{i}"), channels))
                .collect(),
            state_conv: Conv2dLayer::new(store, rng, &format!("{name}.state"), channels, channels, 3, 1, 1),
        }
    }

    /// Returns (features_out, h_new); h_new has h_prev's shape.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &[Value],
        x: Value,
        h_prev: Value,
    ) -> (Value, Value) {
        let joint = tape.concat(x, h_prev);
        let mut feat = self.reduce.forward(tape, params, joint);
        feat = tape.leaky_relu(feat, LEAKY_SLOPE);
        for b in &self.blocks {
            feat = b.forward(tape, params, feat);
        }
        let h = self.state_conv.forward(tape, params, feat);
        let h_new = tape.leaky_relu(h, LEAKY_SLOPE);
        (feat, h_new)
    }
}
