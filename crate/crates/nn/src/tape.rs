//! Reverse-mode autodiff on a linear tape with a dynamic graph.
//!
//! Every operation appends a node holding its forward result; `backward`
//! walks the tape once in reverse. All arithmetic is f64 and single-threaded,
//! so gradients are bit-reproducible. Shape mismatches are programming
//! errors and panic with the offending dimensions.

use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    GlobalAvgPool(usize),
    Concat(usize, usize),
    ScaleChannels { feat: usize, weights: usize },
    Dense { input: usize, weight: usize, bias: usize },
    Conv2d { input: usize, weight: usize, bias: usize, stride: usize, pad: usize },
    ConvTranspose2d { input: usize, weight: usize, bias: usize, stride: usize, pad: usize },
    Charbonnier { pred: usize, target: usize, eps: f64 },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Per-node gradients of one backward pass.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, v: Value) -> &[f64] {
        &self.grads[v.0]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Smallest |x| seen at any activation kink this forward; finite
    /// difference checks use it to reject seeds straddling a kink.
    kink_distance: f64,
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected a 3-D (C, H, W) tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            kink_distance: f64::INFINITY,
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Value {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { shape, data, op });
        Value(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, tensor: &Tensor) -> Value {
        self.push(tensor.shape.clone(), tensor.data.clone(), Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: &[usize], data: Vec<f64>) -> Value {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(shape.to_vec(), data, Op::Leaf)
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance from zero seen at any activation input, for kink
    /// screening in finite-difference checks.
    pub fn kink_distance(&self) -> f64 {
        self.kink_distance
    }

    /// FNV-1a hash over the branch taken by every piecewise activation
    /// input (leaky-relu is the only non-smooth op). Two tapes with equal
    /// signatures evaluated the same smooth piece of the function, so a
    /// finite difference between them is comparable to the analytic
    /// gradient; a signature change means the perturbation crossed a kink.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |byte: u64| {
            h ^= byte;
            h = h.wrapping_mul(0x100000001b3);
        };
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) = node.op {
                for &x in &self.nodes[a].data {
                    mix(u64::from(x > 0.0));
                }
                mix(0xff);
            }
        }
        h
    }

    /// True when every node of the forward pass is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.data.iter().all(|v| v.is_finite()))
    }

    fn assert_same_shape(&self, a: Value, b: Value, what: &str) {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "{what}: shape {:?} vs {:?}",
            self.nodes[a.0].shape, self.nodes[b.0].shape
        );
    }

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        self.assert_same_shape(a, b, "add");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Add(a.0, b.0))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        self.assert_same_shape(a, b, "mul");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Value, k: f64) -> Value {
        let data = self.nodes[a.0].data.iter().map(|x| k * x).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Scale(a.0, k))
    }

    pub fn leaky_relu(&mut self, a: Value, slope: f64) -> Value {
        let mut nearest = self.kink_distance;
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| {
                nearest = nearest.min(x.abs());
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            })
            .collect();
        self.kink_distance = nearest;
        self.push(self.nodes[a.0].shape.clone(), data, Op::LeakyRelu(a.0, slope))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Sigmoid(a.0))
    }

    /// (C, H, W) -> (C,) spatial mean per channel.
    pub fn global_avg_pool(&mut self, a: Value) -> Value {
        let (c, h, w) = dims3(&self.nodes[a.0].shape);
        let plane = h * w;
        let data: Vec<f64> = (0..c)
            .map(|ch| {
                self.nodes[a.0].data[ch * plane..(ch + 1) * plane]
                    .iter()
                    .sum::<f64>()
                    / plane as f64
            })
            .collect();
        self.push(vec![c], data, Op::GlobalAvgPool(a.0))
    }

    /// Concatenate two (C, H, W) tensors along channels.
    pub fn concat(&mut self, a: Value, b: Value) -> Value {
        let (ca, ha, wa) = dims3(&self.nodes[a.0].shape);
        let (cb, hb, wb) = dims3(&self.nodes[b.0].shape);
        assert_eq!(
            (ha, wa),
            (hb, wb),
            "concat: spatial dims {ha}x{wa} vs {hb}x{wb}"
        );
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        self.push(vec![ca + cb, ha, wa], data, Op::Concat(a.0, b.0))
    }

    /// Multiply each channel of (C, H, W) by the matching entry of (C,).
    pub fn scale_channels(&mut self, feat: Value, weights: Value) -> Value {
        let (c, h, w) = dims3(&self.nodes[feat.0].shape);
        assert_eq!(
            self.nodes[weights.0].shape,
            vec![c],
            "scale_channels: weights {:?} for {c} channels",
            self.nodes[weights.0].shape
        );
        let plane = h * w;
        let mut data = self.nodes[feat.0].data.clone();
        for ch in 0..c {
            let k = self.nodes[weights.0].data[ch];
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v *= k;
            }
        }
        self.push(
            vec![c, h, w],
            data,
            Op::ScaleChannels {
                feat: feat.0,
                weights: weights.0,
            },
        )
    }

    /// (out,) = (out, in) x (in,) + (out,)
    pub fn dense(&mut self, input: Value, weight: Value, bias: Value) -> Value {
        let ws = &self.nodes[weight.0].shape;
        assert_eq!(ws.len(), 2, "dense: weight must be 2-D, got {ws:?}");
        let (out_dim, in_dim) = (ws[0], ws[1]);
        assert_eq!(
            self.nodes[input.0].shape,
            vec![in_dim],
            "dense: input {:?} vs weight {:?}",
            self.nodes[input.0].shape,
            ws
        );
        assert_eq!(
            self.nodes[bias.0].shape,
            vec![out_dim],
            "dense: bias {:?} for {out_dim} outputs",
            self.nodes[bias.0].shape
        );
        let x = &self.nodes[input.0].data;
        let wdat = &self.nodes[weight.0].data;
        let data: Vec<f64> = (0..out_dim)
            .map(|o| {
                self.nodes[bias.0].data[o]
                    + wdat[o * in_dim..(o + 1) * in_dim]
                        .iter()
                        .zip(x)
                        .map(|(w, xi)| w * xi)
                        .sum::<f64>()
            })
            .collect();
        self.push(
            vec![out_dim],
            data,
            Op::Dense {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
        )
    }

    /// 2-D convolution, weight (C_out, C_in, kH, kW), zero padding.
    pub fn conv2d(
        &mut self,
        input: Value,
        weight: Value,
        bias: Value,
        stride: usize,
        pad: usize,
    ) -> Value {
        let (c_in, h, w) = dims3(&self.nodes[input.0].shape);
        let ws = &self.nodes[weight.0].shape;
        assert_eq!(ws.len(), 4, "conv2d: weight must be 4-D, got {ws:?}");
        let (c_out, wc_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(
            wc_in, c_in,
            "conv2d: input has {c_in} channels, weight expects {wc_in}"
        );
        assert_eq!(
            self.nodes[bias.0].shape,
            vec![c_out],
            "conv2d: bias {:?} for {c_out} outputs",
            self.nodes[bias.0].shape
        );
        assert!(
            h + 2 * pad >= kh && w + 2 * pad >= kw,
            "conv2d: {h}x{w} input (pad {pad}) smaller than {kh}x{kw} kernel"
        );
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let x = &self.nodes[input.0].data;
        let wd = &self.nodes[weight.0].data;
        let mut data = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let b = self.nodes[bias.0].data[co];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= w {
                                    continue;
                                }
                                let ix = ix - pad;
                                acc += wd[((co * c_in + ci) * kh + ky) * kw + kx]
                                    * x[(ci * h + iy) * w + ix];
                            }
                        }
                    }
                    data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        self.push(
            vec![c_out, oh, ow],
            data,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
        )
    }

    /// Transposed 2-D convolution, weight (C_in, C_out, kH, kW).
    /// Output spatial size is (H-1)*stride - 2*pad + k.
    pub fn conv_transpose2d(
        &mut self,
        input: Value,
        weight: Value,
        bias: Value,
        stride: usize,
        pad: usize,
    ) -> Value {
        let (c_in, h, w) = dims3(&self.nodes[input.0].shape);
        let ws = &self.nodes[weight.0].shape;
        assert_eq!(ws.len(), 4, "conv_transpose2d: weight must be 4-D, got {ws:?}");
        let (wc_in, c_out, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(
            wc_in, c_in,
            "conv_transpose2d: input has {c_in} channels, weight expects {wc_in}"
        );
        assert_eq!(
            self.nodes[bias.0].shape,
            vec![c_out],
            "conv_transpose2d: bias {:?} for {c_out} outputs",
            self.nodes[bias.0].shape
        );
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        assert!(
            oh > 2 * pad && ow > 2 * pad,
            "conv_transpose2d: padding {pad} consumes the whole {oh}x{ow} output"
        );
        let (oh, ow) = (oh - 2 * pad, ow - 2 * pad);
        let x = &self.nodes[input.0].data;
        let wd = &self.nodes[weight.0].data;
        let mut data = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let b = self.nodes[bias.0].data[co];
            for v in &mut data[co * oh * ow..(co + 1) * oh * ow] {
                *v = b;
            }
        }
        for ci in 0..c_in {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x[(ci * h + iy) * w + ix];
                    for co in 0..c_out {
                        for ky in 0..kh {
                            let oy = iy * stride + ky;
                            if oy < pad || oy - pad >= oh {
                                continue;
                            }
                            let oy = oy - pad;
                            for kx in 0..kw {
                                let ox = ix * stride + kx;
                                if ox < pad || ox - pad >= ow {
                                    continue;
                                }
                                let ox = ox - pad;
                                data[(co * oh + oy) * ow + ox] +=
                                    wd[((ci * c_out + co) * kh + ky) * kw + kx] * xv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            vec![c_out, oh, ow],
            data,
            Op::ConvTranspose2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
        )
    }

    /// Scalar mean Charbonnier penalty between two same-shaped tensors.
    pub fn charbonnier(&mut self, pred: Value, target: Value, eps: f64) -> Value {
        self.assert_same_shape(pred, target, "charbonnier");
        let n = self.nodes[pred.0].data.len();
        let sum: f64 = self.nodes[pred.0]
            .data
            .iter()
            .zip(&self.nodes[target.0].data)
            .map(|(p, t)| (p - t).hypot(eps))
            .sum();
        self.push(
            vec![1],
            vec![sum / n as f64],
            Op::Charbonnier {
                pred: pred.0,
                target: target.0,
                eps,
            },
        )
    }

    /// Reverse pass from a scalar output. Returns gradients for every node.
    pub fn backward(&self, output: Value) -> Gradients {
        assert_eq!(
            self.nodes[output.0].data.len(),
            1,
            "backward: output must be scalar, got shape {:?}",
            self.nodes[output.0].shape
        );
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.data.len()])
            .collect();
        let mut touched = vec![false; self.nodes.len()];
        grads[output.0][0] = 1.0;
        touched[output.0] = true;
        for id in (0..=output.0).rev() {
            if !touched[id] {
                continue;
            }
            // The node's grad is complete here: only later nodes feed it.
            let g = std::mem::take(&mut grads[id]);
            match self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += gv;
                        grads[b][i] += gv;
                    }
                    touched[a] = true;
                    touched[b] = true;
                }
                Op::Mul(a, b) => {
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += gv * self.nodes[b].data[i];
                        grads[b][i] += gv * self.nodes[a].data[i];
                    }
                    touched[a] = true;
                    touched[b] = true;
                }
                Op::Scale(a, k) => {
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += k * gv;
                    }
                    touched[a] = true;
                }
                Op::LeakyRelu(a, slope) => {
                    for (i, gv) in g.iter().enumerate() {
                        let x = self.nodes[a].data[i];
                        grads[a][i] += gv * if x > 0.0 { 1.0 } else { slope };
                    }
                    touched[a] = true;
                }
                Op::Sigmoid(a) => {
                    for (i, gv) in g.iter().enumerate() {
                        let y = self.nodes[id].data[i];
                        grads[a][i] += gv * y * (1.0 - y);
                    }
                    touched[a] = true;
                }
                Op::GlobalAvgPool(a) => {
                    let (c, h, w) = dims3(&self.nodes[a].shape);
                    let plane = h * w;
                    for ch in 0..c {
                        let gv = g[ch] / plane as f64;
                        for v in &mut grads[a][ch * plane..(ch + 1) * plane] {
                            *v += gv;
                        }
                    }
                    touched[a] = true;
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a].data.len();
                    for (i, gv) in g.iter().enumerate() {
                        if i < na {
                            grads[a][i] += gv;
                        } else {
                            grads[b][i - na] += gv;
                        }
                    }
                    touched[a] = true;
                    touched[b] = true;
                }
                Op::ScaleChannels { feat, weights } => {
                    let (c, h, w) = dims3(&self.nodes[feat].shape);
                    let plane = h * w;
                    for ch in 0..c {
                        let k = self.nodes[weights].data[ch];
                        let mut wg = 0.0;
                        for i in ch * plane..(ch + 1) * plane {
                            grads[feat][i] += g[i] * k;
                            wg += g[i] * self.nodes[feat].data[i];
                        }
                        grads[weights][ch] += wg;
                    }
                    touched[feat] = true;
                    touched[weights] = true;
                }
                Op::Dense { input, weight, bias } => {
                    let in_dim = self.nodes[input].data.len();
                    for (o, gv) in g.iter().enumerate() {
                        grads[bias][o] += gv;
                        for i in 0..in_dim {
                            grads[weight][o * in_dim + i] += gv * self.nodes[input].data[i];
                            grads[input][i] += gv * self.nodes[weight].data[o * in_dim + i];
                        }
                    }
                    touched[input] = true;
                    touched[weight] = true;
                    touched[bias] = true;
                }
                Op::Conv2d { input, weight, bias, stride, pad } => {
                    let (c_in, h, w) = dims3(&self.nodes[input].shape);
                    let ws = &self.nodes[weight].shape;
                    let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
                    let (oh, ow) = {
                        let s = &self.nodes[id].shape;
                        (s[1], s[2])
                    };
                    for co in 0..c_out {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(co * oh + oy) * ow + ox];
                                if gv == 0.0 {
                                    continue;
                                }
                                grads[bias][co] += gv;
                                for ci in 0..c_in {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pad || ix - pad >= w {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            let widx = ((co * c_in + ci) * kh + ky) * kw + kx;
                                            let xidx = (ci * h + iy) * w + ix;
                                            grads[weight][widx] +=
                                                gv * self.nodes[input].data[xidx];
                                            grads[input][xidx] +=
                                                gv * self.nodes[weight].data[widx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    touched[input] = true;
                    touched[weight] = true;
                    touched[bias] = true;
                }
                Op::ConvTranspose2d { input, weight, bias, stride, pad } => {
                    let (c_in, h, w) = dims3(&self.nodes[input].shape);
                    let ws = &self.nodes[weight].shape;
                    let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
                    let (oh, ow) = {
                        let s = &self.nodes[id].shape;
                        (s[1], s[2])
                    };
                    for co in 0..c_out {
                        for i in 0..oh * ow {
                            grads[bias][co] += g[co * oh * ow + i];
                        }
                    }
                    for ci in 0..c_in {
                        for iy in 0..h {
                            for ix in 0..w {
                                let xidx = (ci * h + iy) * w + ix;
                                let xv = self.nodes[input].data[xidx];
                                for co in 0..c_out {
                                    for ky in 0..kh {
                                        let oy = iy * stride + ky;
                                        if oy < pad || oy - pad >= oh {
                                            continue;
                                        }
                                        let oy = oy - pad;
                                        for kx in 0..kw {
                                            let ox = ix * stride + kx;
                                            if ox < pad || ox - pad >= ow {
                                                continue;
                                            }
                                            let ox = ox - pad;
                                            let gv = g[(co * oh + oy) * ow + ox];
                                            let widx = ((ci * c_out + co) * kh + ky) * kw + kx;
                                            grads[weight][widx] += gv * xv;
                                            grads[input][xidx] +=
                                                gv * self.nodes[weight].data[widx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    touched[input] = true;
                    touched[weight] = true;
                    touched[bias] = true;
                }
                Op::Charbonnier { pred, target, eps } => {
                    let n = self.nodes[pred].data.len() as f64;
                    let gv = g[0] / n;
                    for i in 0..self.nodes[pred].data.len() {
                        let d = self.nodes[pred].data[i] - self.nodes[target].data[i];
                        let dd = gv * d / d.hypot(eps);
                        grads[pred][i] += dd;
                        grads[target][i] -= dd;
                    }
                    touched[pred] = true;
                    touched[target] = true;
                }
            }
            grads[id] = g;
        }
        Gradients { grads }
    }
}
