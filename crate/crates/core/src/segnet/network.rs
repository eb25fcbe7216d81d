//! Pyramid encoder-decoder: conv+ReLU stages with max-pooling between
//! resolutions, nearest-neighbour upsampling back up, and channel
//! concatenation with the same-resolution encoder activations.
//!
//! Canonical parameter order: encoder convolutions level 0 → deepest, then
//! decoder convolutions from the second-deepest level back to level 0, then
//! the final logit convolution. Each convolution stores its kernel followed
//! by its bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, kernel_len, PoolArgmax};
use super::{NetError, ScoreMap, Tensor};
use crate::imagecore::{PixelClass, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvsPerStage {
    /// One entry per level.
    pub encoder: Vec<usize>,
    /// One entry per level except the deepest.
    pub decoder: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub levels: usize,
    pub convs_per_stage: ConvsPerStage,
    pub channels: Vec<usize>,
    pub classes: usize,
    /// Per-channel mean subtracted after scaling pixels to [0, 1].
    pub input_norm: [f64; 3],
}

impl Default for NetworkConfig {
    /// Six levels, widths 16-32-64-64-64-64, two convolutions per encoder
    /// stage and one after each decoder merge. Receptive field 317.
    fn default() -> Self {
        Self::uniform(6, &[16, 32, 64, 64, 64, 64], 2, 1)
    }
}

impl NetworkConfig {
    pub fn uniform(levels: usize, channels: &[usize], enc: usize, dec: usize) -> Self {
        Self {
            levels,
            convs_per_stage: ConvsPerStage {
                encoder: vec![enc; levels],
                decoder: vec![dec; levels.saturating_sub(1)],
            },
            channels: channels.to_vec(),
            classes: 2,
            input_norm: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidConfig(msg));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.channels.len() != self.levels {
            return bad(format!(
                "{} channel widths for {} levels",
                self.channels.len(),
                self.levels
            ));
        }
        if self.channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.convs_per_stage.encoder.len() != self.levels {
            return bad("one encoder conv count per level required".into());
        }
        if self.convs_per_stage.decoder.len() != self.levels - 1 {
            return bad("one decoder conv count per non-deepest level required".into());
        }
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        if !self.input_norm.iter().all(|v| v.is_finite()) {
            return bad("input_norm must be finite".into());
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// `(cin, cout)` of every convolution in canonical order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut cur = 3;
        let mut skip_ch = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            for _ in 0..self.convs_per_stage.encoder[l] {
                shapes.push((cur, self.channels[l]));
                cur = self.channels[l];
            }
            skip_ch.push(cur);
        }
        for l in (0..self.levels - 1).rev() {
            cur += skip_ch[l];
            for _ in 0..self.convs_per_stage.decoder[l] {
                shapes.push((cur, self.channels[l]));
                cur = self.channels[l];
            }
        }
        shapes.push((cur, self.classes));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(i, o)| kernel_len(i, o) + o)
            .sum()
    }
}

/// Input-pixel extent of one output pixel: each 3×3 convolution at a level
/// with effective stride `s` widens the field by `2s`.
pub fn receptive_field(config: &NetworkConfig) -> usize {
    let enc: usize = config
        .convs_per_stage
        .encoder
        .iter()
        .enumerate()
        .map(|(l, &n)| n * 2 * (1 << l))
        .sum();
    let dec: usize = config
        .convs_per_stage
        .decoder
        .iter()
        .enumerate()
        .map(|(l, &n)| n * 2 * (1 << l))
        .sum();
    1 + enc + dec + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BeanVsTray,
    SplitVsSeedCoat,
}

impl ModelKind {
    /// Training target for each ground-truth class; `None` is ignored.
    pub fn class_mapping(self) -> ClassMapping {
        match self {
            ModelKind::BeanVsTray => ClassMapping([Some(0), Some(1), Some(1)]),
            ModelKind::SplitVsSeedCoat => ClassMapping([None, Some(0), Some(1)]),
        }
    }
}

/// Maps [`PixelClass`] to an output channel, or `None` for ignored classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassMapping(pub [Option<usize>; 3]);

impl ClassMapping {
    pub fn target(&self, class: PixelClass) -> Option<usize> {
        self.0[class.index()]
    }

    pub fn ignored(&self) -> Vec<PixelClass> {
        PixelClass::ALL
            .into_iter()
            .filter(|c| self.target(*c).is_none())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub config: NetworkConfig,
    pub model_kind: ModelKind,
    /// All parameters in canonical order.
    pub params: Vec<f64>,
}

/// Offsets of one convolution's kernel and bias in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    kernel: usize,
    bias: usize,
    cout: usize,
}

impl ConvSlot {
    fn kernel<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.kernel..self.bias]
    }
    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.bias..self.bias + self.cout]
    }
}

fn conv_slots(config: &NetworkConfig) -> Vec<ConvSlot> {
    let mut off = 0;
    config
        .conv_shapes()
        .into_iter()
        .map(|(cin, cout)| {
            let slot = ConvSlot {
                kernel: off,
                bias: off + kernel_len(cin, cout),
                cout,
            };
            off = slot.bias + cout;
            slot
        })
        .collect()
}

impl NetworkWeights {
    pub fn zeros(config: NetworkConfig, model_kind: ModelKind) -> Result<Self, NetError> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self {
            config,
            model_kind,
            params: vec![0.0; n],
        })
    }

    /// Kernels uniform in ±1/√fan_in, biases zero.
    pub fn init(config: NetworkConfig, model_kind: ModelKind, seed: u64) -> Result<Self, NetError> {
        let mut w = Self::zeros(config, model_kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (slot, (cin, _)) in conv_slots(&w.config).iter().zip(w.config.conv_shapes()) {
            let bound = 1.0 / ((9 * cin) as f64).sqrt();
            for v in &mut w.params[slot.kernel..slot.bias] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(w)
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.config)
    }

    pub fn check(&self) -> Result<(), NetError> {
        self.config.validate()?;
        let expected = self.config.param_count();
        if self.params.len() != expected {
            return Err(NetError::ShapeMismatch {
                expected,
                actual: self.params.len(),
            });
        }
        Ok(())
    }
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    conv_inputs: Vec<Tensor>,
    /// Post-ReLU outputs (absent for the final logit convolution).
    conv_outputs: Vec<Tensor>,
    pools: Vec<PoolArgmax>,
    /// Channels contributed by the upsampled path at each decoder merge, deepest first.
    merge_split: Vec<usize>,
}

fn check_dims(config: &NetworkConfig, input: &Tensor) -> Result<(), NetError> {
    let m = config.size_multiple();
    if input.height % m != 0 || input.width % m != 0 {
        return Err(NetError::DimensionNotDivisible {
            height: input.height,
            width: input.width,
            multiple: m,
        });
    }
    if input.channels != 3 {
        return Err(NetError::ChannelMismatch {
            input_channels: input.channels,
            kernel_len: 0,
            bias_len: 0,
        });
    }
    Ok(())
}

/// Runs the network on a normalized input tensor, returning per-class logits.
pub fn forward(weights: &NetworkWeights, input: &Tensor) -> Result<(ScoreMap, ForwardCache), NetError> {
    let config = &weights.config;
    check_dims(config, input)?;
    let slots = conv_slots(config);
    let p = &weights.params;
    let mut cache = ForwardCache {
        conv_inputs: Vec::with_capacity(slots.len()),
        conv_outputs: Vec::with_capacity(slots.len()),
        pools: Vec::with_capacity(config.levels),
        merge_split: Vec::with_capacity(config.levels),
    };
    let mut next = slots.iter();
    let mut conv_relu = |h: Tensor, cache: &mut ForwardCache| -> Result<Tensor, NetError> {
        let slot = next.next().expect("slot per conv");
        let out = layers::relu(&layers::conv3x3(&h, slot.kernel(p), slot.bias(p))?);
        cache.conv_inputs.push(h);
        cache.conv_outputs.push(out.clone());
        Ok(out)
    };

    let mut h = input.clone();
    let mut skips = Vec::with_capacity(config.levels);
    for l in 0..config.levels {
        if l > 0 {
            let (pooled, arg) = layers::maxpool2(&h)?;
            cache.pools.push(arg);
            h = pooled;
        }
        for _ in 0..config.convs_per_stage.encoder[l] {
            h = conv_relu(h, &mut cache)?;
        }
        skips.push(h.clone());
    }
    for l in (0..config.levels - 1).rev() {
        let up = layers::upsample_nn2(&h);
        cache.merge_split.push(up.channels);
        h = up.concat_channels(&skips[l])?;
        for _ in 0..config.convs_per_stage.decoder[l] {
            h = conv_relu(h, &mut cache)?;
        }
    }
    let last = slots.last().expect("final conv");
    let logits = layers::conv3x3(&h, last.kernel(p), last.bias(p))?;
    cache.conv_inputs.push(h);
    Ok((logits, cache))
}

/// Parameter gradients (canonical order) and the input gradient for a given
/// gradient of the logits.
pub fn backward(
    weights: &NetworkWeights,
    cache: &ForwardCache,
    grad_logits: &Tensor,
) -> Result<(Vec<f64>, Tensor), NetError> {
    let config = &weights.config;
    let slots = conv_slots(config);
    let p = &weights.params;
    let mut grads = vec![0.0; p.len()];
    let mut conv_idx = slots.len();

    // one conv step backwards; `relu` is false only for the logit layer
    let mut conv_back = |g: Tensor, relu: bool, grads: &mut [f64]| -> Result<Tensor, NetError> {
        conv_idx -= 1;
        let slot = slots[conv_idx];
        let g = if relu {
            layers::relu_backward(&cache.conv_outputs[conv_idx], &g)
        } else {
            g
        };
        let input = &cache.conv_inputs[conv_idx];
        let mut gi = Tensor::zeros(input.height, input.width, input.channels);
        let (gk, gb) = grads[slot.kernel..slot.bias + slot.cout].split_at_mut(slot.bias - slot.kernel);
        layers::conv3x3_backward_into(input, slot.kernel(p), &g, Some(&mut gi), gk, gb)?;
        Ok(gi)
    };

    let mut g = conv_back(grad_logits.clone(), false, &mut grads)?;

    let mut skip_grads: Vec<Option<Tensor>> = vec![None; config.levels];
    for l in 0..config.levels - 1 {
        for _ in 0..config.convs_per_stage.decoder[l] {
            g = conv_back(g, true, &mut grads)?;
        }
        // merges were recorded deepest first
        let up_ch = cache.merge_split[config.levels - 2 - l];
        let (g_up, g_skip) = g.split_channels(up_ch);
        skip_grads[l] = Some(g_skip);
        g = layers::upsample_nn2_backward(&g_up);
    }

    for l in (0..config.levels).rev() {
        if let Some(sg) = skip_grads[l].take() {
            for (a, b) in g.data.iter_mut().zip(&sg.data) {
                *a += b;
            }
        }
        for _ in 0..config.convs_per_stage.encoder[l] {
            g = conv_back(g, true, &mut grads)?;
        }
        if l > 0 {
            g = layers::maxpool2_backward(&cache.pools[l - 1], &g);
        }
    }
    debug_assert_eq!(conv_idx, 0);
    Ok((grads, g))
}

/// Logits for an RGB image whose sides are multiples of `2^(levels-1)`.
pub fn pyramid_forward(weights: &NetworkWeights, image: &RgbImage) -> Result<ScoreMap, NetError> {
    let input = Tensor::from_rgb(image, weights.config.input_norm);
    Ok(forward(weights, &input)?.0)
}

/// Softmax class probabilities for an image of any size: the image is
/// edge-padded to a valid size and the result cropped back.
pub fn predict_probabilities(weights: &NetworkWeights, image: &RgbImage) -> Result<ScoreMap, NetError> {
    let padded = crate::dataset::pad_image(image, weights.config.size_multiple());
    let logits = pyramid_forward(weights, &padded.raster)?;
    Ok(logits
        .crop(padded.left, padded.top, image.width(), image.height())
        .softmax())
}
