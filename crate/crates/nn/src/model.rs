//! The recurrent fusion network: an image branch over the two key frames,
//! bidirectional event recurrence over sub-voxels, event-guided channel
//! attention at every scale, and a transposed-conv decoder emitting one
//! frame per recurrent iteration.
//!
//! Scheduling: the backward sweep runs first (iteration n+1 down to 0) and
//! caches its per-scale features; the forward sweep then consumes them,
//! because its per-scale fusion needs the backward features of the same
//! iteration while the hidden states flow in opposite directions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use evikit_core::{ExposedFrame, Frame, SubVoxel, VoxelGrid};

use crate::error::{Error, Result};
use crate::layers::{
    Conv2dLayer, ConvTranspose2dLayer, Egaca, EvrCell, ParamStore, ResidualBlock, LEAKY_SLOPE,
};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

fn default_scales() -> usize {
    2
}
fn default_base_channels() -> usize {
    8
}
fn default_evr_blocks() -> usize {
    2
}
fn default_image_blocks() -> usize {
    1
}
fn default_exposure_bins() -> usize {
    evikit_core::EXPOSURE_VOXEL_BINS_DEFAULT
}
fn default_cs_reduction() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefidConfig {
    #[serde(default = "default_scales")]
    pub scales: usize,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    pub n_interp: usize,
    #[serde(default = "default_evr_blocks")]
    pub residual_blocks_per_evr: usize,
    #[serde(default = "default_image_blocks")]
    pub image_residual_blocks: usize,
    #[serde(default = "default_exposure_bins")]
    pub exposure_voxel_bins: usize,
    #[serde(default = "default_cs_reduction")]
    pub cs_reduction: usize,
    /// Share one CS block for both gates instead of two parameter sets.
    #[serde(default)]
    pub egaca_shared_cs: bool,
    /// When false the backward sweep is dropped and the fusion concat sees
    /// zeros in the backward slot (ablation mode).
    #[serde(default = "default_true")]
    pub bidirectional: bool,
    /// Tie backward parameters to forward ones and make the fusion and
    /// input convolutions symmetric under swapping their two input groups.
    /// With scales=1 this makes the network exactly equivariant to
    /// reversing the inputs; deeper models break it structurally because
    /// only the forward branch fuses image features between scales.
    #[serde(default)]
    pub symmetric_init: bool,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for RefidConfig {
    fn default() -> RefidConfig {
        RefidConfig {
            scales: default_scales(),
            base_channels: default_base_channels(),
            n_interp: 1,
            residual_blocks_per_evr: default_evr_blocks(),
            image_residual_blocks: default_image_blocks(),
            exposure_voxel_bins: default_exposure_bins(),
            cs_reduction: default_cs_reduction(),
            egaca_shared_cs: false,
            bidirectional: true,
            symmetric_init: false,
            init_seed: 0,
        }
    }
}

impl RefidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 {
            return Err(Error::validation("scales must be >= 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::validation("base_channels must be >= 1"));
        }
        if self.n_interp < 1 {
            return Err(Error::validation("n_interp must be >= 1"));
        }
        if self.residual_blocks_per_evr < 1 {
            return Err(Error::validation("residual_blocks_per_evr must be >= 1"));
        }
        if self.exposure_voxel_bins < 1 {
            return Err(Error::validation("exposure_voxel_bins must be >= 1"));
        }
        if self.cs_reduction < 1 || self.base_channels % self.cs_reduction != 0 {
            return Err(Error::validation(format!(
                "base_channels {} must be divisible by cs_reduction {}",
                self.base_channels, self.cs_reduction
            )));
        }
        if self.symmetric_init && !self.bidirectional {
            return Err(Error::validation(
                "symmetric_init requires the bidirectional branch",
            ));
        }
        Ok(())
    }

    /// Channel width at scale j.
    pub fn channels(&self, j: usize) -> usize {
        self.base_channels << j
    }

    /// Channels entering the image branch: two (frame, exposure-voxel) groups.
    pub fn image_in_channels(&self) -> usize {
        2 * (1 + self.exposure_voxel_bins)
    }

    /// Spatial dims must be divisible by this (deepest scale still intact).
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.scales - 1)
    }
}

/// Borrowed bundle of everything one forward pass consumes.
#[derive(Debug, Clone, Copy)]
pub struct RefidInputs<'a> {
    pub left: &'a ExposedFrame,
    pub right: &'a ExposedFrame,
    pub left_exposure: &'a VoxelGrid,
    pub right_exposure: &'a VoxelGrid,
    pub forward: &'a VoxelGrid,
    pub backward: &'a VoxelGrid,
}

#[derive(Debug)]
pub struct RefidModel {
    cfg: RefidConfig,
    store: ParamStore,
    conv_in: Conv2dLayer,
    image_blocks: Vec<Vec<ResidualBlock>>,
    image_down: Vec<Conv2dLayer>,
    lift_f: Conv2dLayer,
    lift_b: Option<Conv2dLayer>,
    evr_f: Vec<EvrCell>,
    evr_b: Option<Vec<EvrCell>>,
    down_b: Vec<Conv2dLayer>,
    fuse: Vec<Conv2dLayer>,
    egaca: Vec<Egaca>,
    down_f: Vec<Conv2dLayer>,
    bottleneck: ResidualBlock,
    up: Vec<ConvTranspose2dLayer>,
    merge: Vec<Conv2dLayer>,
    head: Conv2dLayer,
}

impl RefidModel {
    pub fn new(cfg: RefidConfig) -> Result<RefidModel> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let s = cfg.scales;

        let conv_in = Conv2dLayer::new(
            &mut store,
            &mut rng,
            "image.in",
            cfg.image_in_channels(),
            cfg.channels(0),
            3,
            1,
            1,
        );
        let image_blocks: Vec<Vec<ResidualBlock>> = (0..s)
            .map(|j| {
                (0..cfg.image_residual_blocks)
                    .map(|k| {
                        ResidualBlock::new(
                            &mut store,
                            &mut rng,
                            &format!("image.s{j}.res{k}"),
                            cfg.channels(j),
                        )
                    })
                    .collect()
            })
            .collect();
        let image_down: Vec<Conv2dLayer> = (0..s - 1)
            .map(|j| {
                Conv2dLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("image.down{j}"),
                    cfg.channels(j),
                    cfg.channels(j + 1),
                    3,
                    2,
                    1,
                )
            })
            .collect();

        let lift_f = Conv2dLayer::new(&mut store, &mut rng, "lift.f", 2, cfg.channels(0), 3, 1, 1);
        let lift_b = cfg
            .bidirectional
            .then(|| Conv2dLayer::new(&mut store, &mut rng, "lift.b", 2, cfg.channels(0), 3, 1, 1));
        let evr_f: Vec<EvrCell> = (0..s)
            .map(|j| {
                EvrCell::new(
                    &mut store,
                    &mut rng,
                    &format!("evr_f.s{j}"),
                    cfg.channels(j),
                    cfg.residual_blocks_per_evr,
                )
            })
            .collect();
        let evr_b = cfg.bidirectional.then(|| {
            (0..s)
                .map(|j| {
                    EvrCell::new(
                        &mut store,
                        &mut rng,
                        &format!("evr_b.s{j}"),
                        cfg.channels(j),
                        cfg.residual_blocks_per_evr,
                    )
                })
                .collect::<Vec<_>>()
        });
        let down_b: Vec<Conv2dLayer> = if cfg.bidirectional {
            (0..s - 1)
                .map(|j| {
                    Conv2dLayer::new(
                        &mut store,
                        &mut rng,
                        &format!("down_b.{j}"),
                        cfg.channels(j),
                        cfg.channels(j + 1),
                        3,
                        2,
                        1,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        let fuse: Vec<Conv2dLayer> = (0..s)
            .map(|j| {
                Conv2dLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("fuse.{j}"),
                    2 * cfg.channels(j),
                    cfg.channels(j),
                    3,
                    1,
                    1,
                )
            })
            .collect();
        let egaca: Vec<Egaca> = (0..s)
            .map(|j| {
                Egaca::new(
                    &mut store,
                    &mut rng,
                    &format!("egaca.{j}"),
                    cfg.channels(j),
                    cfg.cs_reduction,
                    cfg.egaca_shared_cs,
                )
            })
            .collect();
        let down_f: Vec<Conv2dLayer> = (0..s - 1)
            .map(|j| {
                Conv2dLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("down_f.{j}"),
                    cfg.channels(j),
                    cfg.channels(j + 1),
                    3,
                    2,
                    1,
                )
            })
            .collect();

        let bottleneck =
            ResidualBlock::new(&mut store, &mut rng, "bottleneck.res0", cfg.channels(s - 1));
        let up: Vec<ConvTranspose2dLayer> = (0..s - 1)
            .map(|j| {
                ConvTranspose2dLayer::upsample2x(
                    &mut store,
                    &mut rng,
                    &format!("up.{j}"),
                    cfg.channels(j + 1),
                    cfg.channels(j),
                )
            })
            .collect();
        let merge: Vec<Conv2dLayer> = (0..s - 1)
            .map(|j| {
                Conv2dLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("merge.{j}"),
                    2 * cfg.channels(j),
                    cfg.channels(j),
                    3,
                    1,
                    1,
                )
            })
            .collect();
        let head = Conv2dLayer::new(&mut store, &mut rng, "head", cfg.channels(0), 1, 3, 1, 1);

        let mut model = RefidModel {
            cfg,
            store,
            conv_in,
            image_blocks,
            image_down,
            lift_f,
            lift_b,
            evr_f,
            evr_b,
            down_b,
            fuse,
            egaca,
            down_f,
            bottleneck,
            up,
            merge,
            head,
        };
        if model.cfg.symmetric_init {
            model.apply_symmetric_ties();
        }
        Ok(model)
    }

    fn apply_symmetric_ties(&mut self) {
        self.store.tie_prefix("lift.b.", "lift.f.");
        self.store.tie_prefix("evr_b.", "evr_f.");
        if !self.down_b.is_empty() {
            self.store.tie_prefix("down_b.", "down_f.");
        }
        // Swapping the two (frame, exposure) groups must not change the
        // image branch, and swapping the (backward, forward) feature halves
        // must not change the fusion convs.
        tie_input_halves(self.store.tensor_mut(self.conv_in.weight));
        for f in &self.fuse {
            tie_input_halves(self.store.tensor_mut(f.weight));
        }
    }

    pub fn cfg(&self) -> &RefidConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn validate_inputs(&self, inputs: &RefidInputs) -> Result<()> {
        let cfg = &self.cfg;
        let l = &inputs.left.image;
        let r = &inputs.right.image;
        if l.channels() != 1 || r.channels() != 1 {
            return Err(Error::validation(format!(
                "key frames must be single-channel, got {} and {}",
                l.channels(),
                r.channels()
            )));
        }
        if !l.same_shape(r) {
            return Err(Error::validation(format!(
                "key frames disagree: {}x{} vs {}x{}",
                l.width(),
                l.height(),
                r.width(),
                r.height()
            )));
        }
        let d = cfg.spatial_divisor();
        if l.height() % d != 0 || l.width() % d != 0 || l.height() < 2 * d || l.width() < 2 * d {
            return Err(Error::validation(format!(
                "{}x{} frames do not survive {} downsampling stages (need divisibility by {} and at least {} per side)",
                l.width(), l.height(), cfg.scales - 1, d, 2 * d
            )));
        }
        let want_bins = cfg.n_interp + 2;
        for (name, grid, bins) in [
            ("forward", inputs.forward, want_bins),
            ("backward", inputs.backward, want_bins),
            ("left exposure", inputs.left_exposure, cfg.exposure_voxel_bins),
            ("right exposure", inputs.right_exposure, cfg.exposure_voxel_bins),
        ] {
            if grid.bins() != bins {
                return Err(Error::validation(format!(
                    "{name} grid has {} bins, expected {bins}",
                    grid.bins()
                )));
            }
            if grid.height() != l.height() || grid.width() != l.width() {
                return Err(Error::validation(format!(
                    "{name} grid is {}x{}, frames are {}x{}",
                    grid.width(),
                    grid.height(),
                    l.width(),
                    l.height()
                )));
            }
        }
        if inputs.forward.window() != inputs.backward.window() {
            return Err(Error::validation(
                "forward and backward grids cover different windows",
            ));
        }
        Ok(())
    }

    /// Runs the network on an existing tape; `params` must come from
    /// `store().leaf_all` on that tape. Returns n+2 raw (1, H, W) outputs.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Value],
        inputs: &RefidInputs,
    ) -> Result<Vec<Value>> {
        self.validate_inputs(inputs)?;
        let cfg = &self.cfg;
        let s = cfg.scales;
        let n = cfg.n_interp;
        let (h, w) = (inputs.left.image.height(), inputs.left.image.width());

        // Image branch: concat(I0, E0, I1, E1) -> multi-scale features M_j.
        let image_in = tape.leaf(&image_branch_input(inputs));
        let mut m = Vec::with_capacity(s);
        let mut x = self.conv_in.forward(tape, params, image_in);
        x = tape.leaky_relu(x, LEAKY_SLOPE);
        for j in 0..s {
            if j > 0 {
                x = self.image_down[j - 1].forward(tape, params, x);
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
            for b in &self.image_blocks[j] {
                x = b.forward(tape, params, x);
            }
            m.push(x);
        }

        let zero_state: Vec<Value> = (0..s)
            .map(|j| tape.leaf(&Tensor::zeros(vec![cfg.channels(j), h >> j, w >> j])))
            .collect();

        // Backward sweep first: iteration i consumes the backward grid's
        // sub-voxel mirrored in time, carrying state from i+1 down to i.
        let mut cache: Vec<Vec<Value>> = vec![Vec::new(); n + 2];
        match (&self.evr_b, &self.lift_b) {
            (Some(evr_b), Some(lift_b)) => {
                let mut h_b = zero_state.clone();
                for i in (0..n + 2).rev() {
                    let idx = (n + 1 - i).clamp(1, n + 1);
                    let sub = inputs.backward.subvoxel(idx)?;
                    let mut xb = tape.leaf(&subvoxel_tensor(&sub));
                    xb = lift_b.forward(tape, params, xb);
                    xb = tape.leaky_relu(xb, LEAKY_SLOPE);
                    for j in 0..s {
                        let (feat, h_new) = evr_b[j].step(tape, params, xb, h_b[j]);
                        h_b[j] = h_new;
                        cache[i].push(feat);
                        if j + 1 < s {
                            xb = self.down_b[j].forward(tape, params, feat);
                            xb = tape.leaky_relu(xb, LEAKY_SLOPE);
                        }
                    }
                }
            }
            _ => {
                for slot in &mut cache {
                    *slot = zero_state.clone();
                }
            }
        }

        // Forward sweep: fuse with the cached backward features and the
        // image branch at every scale, then decode one frame per iteration.
        let mut outputs = Vec::with_capacity(n + 2);
        let mut h_f = zero_state;
        for (i, cached) in cache.iter().enumerate() {
            let idx = i.clamp(1, n + 1);
            let sub = inputs.forward.subvoxel(idx)?;
            let mut xf = tape.leaf(&subvoxel_tensor(&sub));
            xf = self.lift_f.forward(tape, params, xf);
            xf = tape.leaky_relu(xf, LEAKY_SLOPE);
            let mut skips = Vec::with_capacity(s);
            for j in 0..s {
                let (feat, h_new) = self.evr_f[j].step(tape, params, xf, h_f[j]);
                h_f[j] = h_new;
                let joint = tape.concat(cached[j], feat);
                let mixed = self.fuse[j].forward(tape, params, joint);
                let fused = self.egaca[j].forward(tape, params, mixed, m[j]);
                skips.push(fused);
                if j + 1 < s {
                    xf = self.down_f[j].forward(tape, params, fused);
                    xf = tape.leaky_relu(xf, LEAKY_SLOPE);
                }
            }
            let mut y = self.bottleneck.forward(tape, params, skips[s - 1]);
            for j in (0..s - 1).rev() {
                y = self.up[j].forward(tape, params, y);
                y = tape.leaky_relu(y, LEAKY_SLOPE);
                let joint = tape.concat(y, skips[j]);
                y = self.merge[j].forward(tape, params, joint);
                y = tape.leaky_relu(y, LEAKY_SLOPE);
            }
            outputs.push(self.head.forward(tape, params, y));
        }
        Ok(outputs)
    }

    /// One-shot forward returning raw output tensors.
    pub fn forward(&self, inputs: &RefidInputs) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let params = self.store.leaf_all(&mut tape);
        let outs = self.forward_on_tape(&mut tape, &params, inputs)?;
        Ok(outs
            .into_iter()
            .map(|v| Tensor::new(tape.shape(v).to_vec(), tape.data(v).to_vec()))
            .collect())
    }

    /// Forward pass clamped into displayable frames.
    pub fn predict_frames(&self, inputs: &RefidInputs) -> Result<Vec<Frame>> {
        let (h, w) = (inputs.left.image.height(), inputs.left.image.width());
        self.forward(inputs)?
            .into_iter()
            .map(|t| {
                let data = t.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                Frame::new(w, h, 1, data).map_err(Error::from)
            })
            .collect()
    }
}

/// Symmetrizes a conv weight (c_out, c_in, kh, kw) so both halves of the
/// input channels see identical filters.
fn tie_input_halves(t: &mut Tensor) {
    assert_eq!(t.shape.len(), 4);
    let (co, ci) = (t.shape[0], t.shape[1]);
    assert_eq!(ci % 2, 0, "tie_input_halves: odd input channel count {ci}");
    let half = ci / 2;
    let plane = t.shape[2] * t.shape[3];
    for o in 0..co {
        for i in 0..half {
            for p in 0..plane {
                t.data[(o * ci + half + i) * plane + p] = t.data[(o * ci + i) * plane + p];
            }
        }
    }
}

fn subvoxel_tensor(sub: &SubVoxel) -> Tensor {
    let mut data = Vec::with_capacity(2 * sub.lo.len());
    data.extend_from_slice(sub.lo);
    data.extend_from_slice(sub.hi);
    Tensor::new(vec![2, sub.height, sub.width], data)
}

/// Stacks (I0, E0, I1, E1) channel-wise into one input tensor.
fn image_branch_input(inputs: &RefidInputs) -> Tensor {
    let l = &inputs.left.image;
    let (h, w) = (l.height(), l.width());
    let eb = inputs.left_exposure.bins();
    let mut data = Vec::with_capacity((2 + 2 * eb) * h * w);
    data.extend_from_slice(l.data());
    for b in 0..eb {
        data.extend_from_slice(inputs.left_exposure.channel(b));
    }
    data.extend_from_slice(inputs.right.image.data());
    for b in 0..eb {
        data.extend_from_slice(inputs.right_exposure.channel(b));
    }
    Tensor::new(vec![2 + 2 * eb, h, w], data)
}
