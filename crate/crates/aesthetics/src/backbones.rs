//! Backbone feature extractors (VGG19, AlexNet, and a desk-scale TINY stand-in)
//! plus classifier heads, pretrained-weight loading, and freeze policies.
//!
//! Parameter names are positional and 1-based: "block{i}.conv{j}.weight",
//! "head.dense{k}.bias". Weight files and checkpoints address tensors by
//! these names, so ports from other implementations stay mechanical.

use std::ops::RangeInclusive;
use std::path::Path;

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint;
use crate::config::derive_seed;
use crate::nn::{normal_init, Conv2d, Dense, DenseStack, MaxPool2d, Param, Relu};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("incompatible weights for `{name}`: {detail}")]
    WeightsIncompatible { name: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Vgg19,
    Alexnet,
    Tiny,
}

impl BackboneKind {
    pub fn parse(s: &str) -> Result<BackboneKind, BackboneError> {
        match s.to_ascii_lowercase().as_str() {
            "vgg19" => Ok(BackboneKind::Vgg19),
            "alexnet" => Ok(BackboneKind::Alexnet),
            "tiny" => Ok(BackboneKind::Tiny),
            other => Err(BackboneError::BadSpec(format!(
                "unknown backbone kind `{other}` (expected vgg19, alexnet, or tiny)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Vgg19 => "VGG19",
            BackboneKind::Alexnet => "AlexNet",
            BackboneKind::Tiny => "TINY",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            BackboneKind::Vgg19 => "vgg19",
            BackboneKind::Alexnet => "alexnet",
            BackboneKind::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvPlan {
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct BlockPlan {
    convs: Vec<ConvPlan>,
    /// (kernel, stride) of the trailing max-pool, if the block has one.
    pool: Option<(usize, usize)>,
}

fn layout(kind: BackboneKind) -> Vec<BlockPlan> {
    let conv = |in_c, out_c, kernel, stride, padding| ConvPlan {
        in_c,
        out_c,
        kernel,
        stride,
        padding,
    };
    match kind {
        // Five blocks of 3x3 convolutions, 2/2/4/4/4 deep, each closed by a
        // 2x2 pool.
        BackboneKind::Vgg19 => {
            let widths = [64usize, 128, 256, 512, 512];
            let depths = [2usize, 2, 4, 4, 4];
            let mut in_c = 3;
            widths
                .iter()
                .zip(depths)
                .map(|(&w, d)| {
                    let convs = (0..d)
                        .map(|_| {
                            let c = conv(in_c, w, 3, 1, 1);
                            in_c = w;
                            c
                        })
                        .collect();
                    BlockPlan {
                        convs,
                        pool: Some((2, 2)),
                    }
                })
                .collect()
        }
        // Five convolutions grouped by the three overlapping 3x2 pools.
        BackboneKind::Alexnet => vec![
            BlockPlan {
                convs: vec![conv(3, 64, 11, 4, 2)],
                pool: Some((3, 2)),
            },
            BlockPlan {
                convs: vec![conv(64, 192, 5, 1, 2)],
                pool: Some((3, 2)),
            },
            BlockPlan {
                convs: vec![
                    conv(64 * 3, 384, 3, 1, 1),
                    conv(384, 256, 3, 1, 1),
                    conv(256, 256, 3, 1, 1),
                ],
                pool: Some((3, 2)),
            },
        ],
        // Two single-conv blocks with aggressive pooling: same interface,
        // desk-scale cost.
        BackboneKind::Tiny => vec![
            BlockPlan {
                convs: vec![conv(3, 8, 3, 2, 1)],
                pool: Some((4, 4)),
            },
            BlockPlan {
                convs: vec![conv(8, 16, 3, 1, 1)],
                pool: Some((4, 4)),
            },
        ],
    }
}

/// Flattened feature width a backbone produces at the given input size,
/// computed from the layer plan without allocating any parameters.
pub fn feature_len(kind: BackboneKind, input_size: usize) -> Result<usize, BackboneError> {
    let mut size = input_size;
    let mut channels = 3usize;
    for plan in layout(kind) {
        for cp in &plan.convs {
            if size + 2 * cp.padding < cp.kernel {
                return Err(BackboneError::BadSpec(format!(
                    "input size {input_size} too small for {}",
                    kind.name()
                )));
            }
            size = (size + 2 * cp.padding - cp.kernel) / cp.stride + 1;
            channels = cp.out_c;
        }
        if let Some((k, s)) = plan.pool {
            if size < k {
                return Err(BackboneError::BadSpec(format!(
                    "input size {input_size} too small for {}",
                    kind.name()
                )));
            }
            size = (size - k) / s + 1;
        }
    }
    Ok(channels * size * size)
}

struct ConvBlock {
    convs: Vec<Conv2d>,
    relus: Vec<Relu<ndarray::Ix4>>,
    pool: Option<MaxPool2d>,
}

impl ConvBlock {
    fn forward(&mut self, input: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut x = input.clone();
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus) {
            x = conv.forward(&x, train);
            x = relu.forward(&x, train);
        }
        if let Some(pool) = &mut self.pool {
            x = pool.forward(&x, train);
        }
        x
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mut g = grad.clone();
        if let Some(pool) = &mut self.pool {
            g = pool.backward(&g);
        }
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus).rev() {
            g = relu.backward(&g);
            g = conv.backward(&g);
        }
        g
    }
}

/// Convolutional feature extractor: ordered blocks, flattened output.
pub struct Backbone {
    pub kind: BackboneKind,
    pub input_size: usize,
    pub feature_len: usize,
    blocks: Vec<ConvBlock>,
    final_dims: (usize, usize, usize),
}

impl Backbone {
    /// Build with name-keyed deterministic initialization: each layer's
    /// weights depend only on (seed, its parameter name).
    pub fn build(kind: BackboneKind, input_size: usize, seed: u64) -> Result<Backbone, BackboneError> {
        let plans = layout(kind);
        let mut blocks = Vec::with_capacity(plans.len());
        let mut size = input_size;
        let mut channels = 3usize;
        for (bi, plan) in plans.iter().enumerate() {
            let mut convs = Vec::with_capacity(plan.convs.len());
            let mut relus = Vec::with_capacity(plan.convs.len());
            for (ci, cp) in plan.convs.iter().enumerate() {
                let name = format!("block{}.conv{}", bi + 1, ci + 1);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init", &name]));
                let conv = Conv2d::new(cp.in_c, cp.out_c, cp.kernel, cp.stride, cp.padding, &mut rng);
                if size + 2 * cp.padding < cp.kernel {
                    return Err(BackboneError::BadSpec(format!(
                        "input size {input_size} too small for {}",
                        kind.name()
                    )));
                }
                size = (size + 2 * cp.padding - cp.kernel) / cp.stride + 1;
                channels = cp.out_c;
                convs.push(conv);
                relus.push(Relu::new());
            }
            let pool = match plan.pool {
                Some((k, s)) => {
                    if size < k {
                        return Err(BackboneError::BadSpec(format!(
                            "input size {input_size} too small for {}",
                            kind.name()
                        )));
                    }
                    size = (size - k) / s + 1;
                    Some(MaxPool2d::new(k, s))
                }
                None => None,
            };
            blocks.push(ConvBlock { convs, relus, pool });
        }
        Ok(Backbone {
            kind,
            input_size,
            feature_len: channels * size * size,
            blocks,
            final_dims: (channels, size, size),
        })
    }

    pub fn conv_count(&self) -> usize {
        self.blocks.iter().map(|b| b.convs.len()).sum()
    }

    pub fn block_conv_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.convs.len()).collect()
    }

    pub fn pool_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.pool.is_some()).count()
    }

    /// Flattened features, shape (B, feature_len).
    pub fn forward(&mut self, input: &Array4<f32>, train: bool) -> Array2<f32> {
        let mut x = input.clone();
        for block in &mut self.blocks {
            x = block.forward(&x, train);
        }
        let (b, c, h, w) = x.dim();
        debug_assert_eq!(c * h * w, self.feature_len);
        x.into_shape_with_order((b, c * h * w))
            .expect("contiguous features")
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let (batch, f) = grad.dim();
        assert_eq!(f, self.feature_len);
        let (c, h, w) = self.final_dims;
        let mut g = grad
            .to_owned()
            .into_shape_with_order((batch, c, h, w))
            .expect("contiguous gradient");
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
        g
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (ci, conv) in block.convs.iter().enumerate() {
                let base = format!("block{}.conv{}", bi + 1, ci + 1);
                out.push((format!("{base}.weight"), &conv.weight));
                out.push((format!("{base}.bias"), &conv.bias));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (ci, conv) in block.convs.iter_mut().enumerate() {
                let base = format!("block{}.conv{}", bi + 1, ci + 1);
                out.push((format!("{base}.weight"), &mut conv.weight));
                out.push((format!("{base}.bias"), &mut conv.bias));
            }
        }
        out
    }

    /// Set conv trainability by global 1-based conv index.
    pub fn set_conv_trainable(&mut self, keep: impl Fn(usize) -> bool) {
        let mut idx = 0usize;
        for block in &mut self.blocks {
            for conv in &mut block.convs {
                idx += 1;
                let t = keep(idx);
                conv.weight.trainable = t;
                conv.bias.trainable = t;
            }
        }
    }

    pub fn has_trainable_params(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| b.convs.iter().any(|c| c.weight.trainable || c.bias.trainable))
    }
}

/// Classifier-head widths: hidden layers then the mandatory 2-way output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    widths: Vec<usize>,
}

impl HeadSpec {
    pub fn new(widths: Vec<usize>) -> Result<HeadSpec, BackboneError> {
        if widths.is_empty() {
            return Err(BackboneError::BadSpec("head needs at least one layer".into()));
        }
        if *widths.last().unwrap() != 2 {
            return Err(BackboneError::BadSpec(format!(
                "head must end in 2 output classes, got {}",
                widths.last().unwrap()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(BackboneError::BadSpec("zero-width head layer".into()));
        }
        Ok(HeadSpec { widths })
    }

    /// Nine tapering hidden layers for VGG19, the classic two hidden layers
    /// for AlexNet, one small hidden layer for TINY.
    pub fn default_for(kind: BackboneKind) -> HeadSpec {
        let widths = match kind {
            BackboneKind::Vgg19 => vec![4096, 2048, 1024, 512, 256, 128, 64, 32, 16, 2],
            BackboneKind::Alexnet => vec![4096, 4096, 2],
            BackboneKind::Tiny => vec![64, 2],
        };
        HeadSpec { widths }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }
}

/// Which parameters an optimization step may touch. The sets nest:
/// HeadOnly ⊂ HeadPlusTopConv ⊂ All.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainablePolicy {
    HeadOnly,
    HeadPlusTopConv,
    All,
}

impl TrainablePolicy {
    pub fn name(self) -> &'static str {
        match self {
            TrainablePolicy::HeadOnly => "HEAD_ONLY",
            TrainablePolicy::HeadPlusTopConv => "HEAD_PLUS_TOP_CONV",
            TrainablePolicy::All => "ALL",
        }
    }
}

/// Global 1-based conv indices unfrozen by HEAD_PLUS_TOP_CONV: the top two
/// blocks for VGG19 (convs 9-16), conv layers 4-5 for AlexNet, the top conv
/// for TINY.
pub fn trainable_conv_range(kind: BackboneKind) -> RangeInclusive<usize> {
    match kind {
        BackboneKind::Vgg19 => 9..=16,
        BackboneKind::Alexnet => 4..=5,
        BackboneKind::Tiny => 2..=2,
    }
}

pub fn conv_trainable_under(policy: TrainablePolicy, kind: BackboneKind, index: usize) -> bool {
    match policy {
        TrainablePolicy::HeadOnly => false,
        TrainablePolicy::HeadPlusTopConv => trainable_conv_range(kind).contains(&index),
        TrainablePolicy::All => true,
    }
}

/// One backbone with its classification head: maps (B,3,S,S) to logits (B,2).
pub struct Network {
    pub backbone: Backbone,
    pub head: DenseStack,
    head_spec: HeadSpec,
}

fn build_head(
    feature_len: usize,
    spec: &HeadSpec,
    kind: BackboneKind,
    seed: u64,
) -> DenseStack {
    let mut widths = Vec::with_capacity(spec.widths.len() + 1);
    widths.push(feature_len);
    widths.extend_from_slice(&spec.widths);
    let layers: Vec<Dense> = widths
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let name = format!("head.dense{}", i + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init", &name]));
            let mut dense = Dense::new(pair[0], pair[1], &mut rng);
            if kind == BackboneKind::Alexnet {
                // Classic small-normal initialization for the AlexNet head.
                dense.weight.value = normal_init(&[pair[1], pair[0]], 0.01, &mut rng);
            }
            dense
        })
        .collect();
    DenseStack::from_layers(layers)
}

impl Network {
    pub fn build(
        kind: BackboneKind,
        input_size: usize,
        head: Option<HeadSpec>,
        seed: u64,
    ) -> Result<Network, BackboneError> {
        let backbone = Backbone::build(kind, input_size, seed)?;
        let head_spec = head.unwrap_or_else(|| HeadSpec::default_for(kind));
        let head = build_head(backbone.feature_len, &head_spec, kind, seed);
        Ok(Network {
            backbone,
            head,
            head_spec,
        })
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head_spec
    }

    pub fn forward(&mut self, input: &Array4<f32>, train: bool) -> Array2<f32> {
        let features = self.backbone.forward(input, train);
        self.head.forward(&features, train)
    }

    pub fn backward(&mut self, grad_logits: &Array2<f32>) -> Option<Array4<f32>> {
        let grad_features = self.head.backward(grad_logits);
        if self.backbone.has_trainable_params() {
            Some(self.backbone.backward(&grad_features))
        } else {
            None
        }
    }

    /// Swap in a fresh head; the feature extractor is untouched bit for bit.
    pub fn replace_head(&mut self, spec: HeadSpec, seed: u64) {
        self.head = build_head(self.backbone.feature_len, &spec, self.backbone.kind, seed);
        self.head_spec = spec;
    }

    pub fn set_policy(&mut self, policy: TrainablePolicy) {
        let kind = self.backbone.kind;
        self.backbone
            .set_conv_trainable(|idx| conv_trainable_under(policy, kind, idx));
        for layer in &mut self.head.layers {
            layer.weight.trainable = true;
            layer.bias.trainable = true;
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = self.backbone.named_params();
        for (i, layer) in self.head.layers.iter().enumerate() {
            out.push((format!("head.dense{}.weight", i + 1), &layer.weight));
            out.push((format!("head.dense{}.bias", i + 1), &layer.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = self.backbone.named_params_mut();
        for (i, layer) in self.head.layers.iter_mut().enumerate() {
            out.push((format!("head.dense{}.weight", i + 1), &mut layer.weight));
            out.push((format!("head.dense{}.bias", i + 1), &mut layer.bias));
        }
        out
    }
}

/// Populate a network's conv weights from a named-block weights file. The
/// head keeps its fresh initialization. Every backbone parameter must be
/// present with the exact shape.
pub fn load_pretrained(network: &mut Network, path: &Path) -> Result<(), BackboneError> {
    let (_, blocks) = checkpoint::read_file(path).map_err(|e| BackboneError::WeightsIncompatible {
        name: path.display().to_string(),
        detail: e.to_string(),
    })?;
    load_backbone_blocks(&mut network.backbone, &blocks)
}

/// Same contract, writing directly into a bare backbone (multi-column models
/// hold columns without heads).
pub fn load_backbone_blocks(
    backbone: &mut Backbone,
    blocks: &[(String, ndarray::ArrayD<f32>)],
) -> Result<(), BackboneError> {
    let index: std::collections::BTreeMap<&str, &ndarray::ArrayD<f32>> =
        blocks.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, param) in backbone.named_params_mut() {
        let tensor = index
            .get(name.as_str())
            .ok_or_else(|| BackboneError::WeightsIncompatible {
                name: name.clone(),
                detail: "missing from weights file".into(),
            })?;
        if tensor.shape() != param.value.shape() {
            return Err(BackboneError::WeightsIncompatible {
                name,
                detail: format!(
                    "shape {:?} in file vs {:?} in model",
                    tensor.shape(),
                    param.value.shape()
                ),
            });
        }
        param.value = (*tensor).clone();
        param.velocity = None;
        param.grad = None;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::param_fingerprint;
    use crate::nn::{sgd_step, softmax_cross_entropy};
    use rand::Rng;

    fn random_batch(b: usize, size: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((b, 3, size, size), |_| rng.gen::<f32>())
    }

    fn fingerprint_of(params: &[(String, &Param)]) -> String {
        param_fingerprint(params)
    }

    fn one_training_step(net: &mut Network, batch: &Array4<f32>, labels: &[usize], lr: f32) {
        let logits = net.forward(batch, true);
        let out = softmax_cross_entropy(&logits, labels, None);
        net.backward(&out.grad);
        let mut named = net.named_params_mut();
        let mut params: Vec<&mut Param> = named.iter_mut().map(|(_, p)| &mut **p).collect();
        sgd_step(&mut params, lr, 0.9);
    }

    #[test]
    fn kind_parsing_and_bad_kind() {
        assert_eq!(BackboneKind::parse("VGG19").unwrap(), BackboneKind::Vgg19);
        assert_eq!(BackboneKind::parse("alexnet").unwrap(), BackboneKind::Alexnet);
        assert!(matches!(
            BackboneKind::parse("resnet"),
            Err(BackboneError::BadSpec(_))
        ));
    }

    #[test]
    fn vgg19_structure_and_feature_length() {
        let bb = Backbone::build(BackboneKind::Vgg19, 224, 1).unwrap();
        assert_eq!(bb.conv_count(), 16);
        assert_eq!(bb.block_conv_counts(), vec![2, 2, 4, 4, 4]);
        assert_eq!(bb.pool_count(), 5);
        assert_eq!(bb.feature_len, 512 * 7 * 7);
    }

    #[test]
    fn feature_trace_matches_built_networks() {
        for kind in [BackboneKind::Vgg19, BackboneKind::Alexnet, BackboneKind::Tiny] {
            for size in [224usize, 127] {
                let traced = feature_len(kind, size).unwrap();
                let built = Backbone::build(kind, size, 1).unwrap().feature_len;
                assert_eq!(traced, built, "{} at {size}", kind.name());
            }
        }
        assert_eq!(feature_len(BackboneKind::Vgg19, 224).unwrap(), 25088);
        assert_eq!(feature_len(BackboneKind::Alexnet, 224).unwrap(), 9216);
        assert_eq!(feature_len(BackboneKind::Tiny, 224).unwrap(), 784);
        assert!(feature_len(BackboneKind::Alexnet, 16).is_err());
    }

    #[test]
    fn alexnet_structure_and_feature_length() {
        let bb = Backbone::build(BackboneKind::Alexnet, 224, 1).unwrap();
        assert_eq!(bb.conv_count(), 5);
        assert_eq!(bb.feature_len, 256 * 6 * 6);
        let net = Network::build(BackboneKind::Alexnet, 224, None, 1).unwrap();
        assert_eq!(net.head.layers.len(), 3, "three fully connected layers");
    }

    #[test]
    fn tiny_feature_shape_and_logits() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 2).unwrap();
        assert_eq!(net.backbone.feature_len, 16 * 7 * 7);
        let feats = net.backbone.forward(&random_batch(4, 224, 3), false);
        assert_eq!(feats.dim(), (4, 784));
        for b in [1usize, 5] {
            let logits = net.forward(&random_batch(b, 224, b as u64), false);
            assert_eq!(logits.dim(), (b, 2));
        }
    }

    #[test]
    fn vgg19_with_default_head_yields_finite_two_way_logits() {
        // Small input keeps the full 16-conv network affordable; the head
        // structure (nine hidden layers + output) is identical to 224-scale.
        let mut net = Network::build(BackboneKind::Vgg19, 32, None, 4).unwrap();
        assert_eq!(net.head.layers.len(), 10);
        let logits = net.forward(&Array4::zeros((2, 3, 32, 32)), false);
        assert_eq!(logits.dim(), (2, 2));
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn head_spec_rejects_bad_output_width() {
        assert!(matches!(HeadSpec::new(vec![64, 3]), Err(BackboneError::BadSpec(_))));
        assert!(matches!(HeadSpec::new(vec![]), Err(BackboneError::BadSpec(_))));
        assert!(HeadSpec::new(vec![2]).is_ok());
    }

    #[test]
    fn replace_head_preserves_backbone_bitwise() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 5).unwrap();
        let before = fingerprint_of(&net.backbone.named_params());
        net.replace_head(HeadSpec::new(vec![32, 2]).unwrap(), 99);
        assert_eq!(before, fingerprint_of(&net.backbone.named_params()));
        assert_eq!(net.head.layers.len(), 2);
        let logits = net.forward(&random_batch(3, 224, 6), false);
        assert_eq!(logits.dim(), (3, 2));
    }

    #[test]
    fn head_only_policy_freezes_every_conv() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 7).unwrap();
        net.set_policy(TrainablePolicy::HeadOnly);
        let conv_before = fingerprint_of(&net.backbone.named_params());
        let head_before = {
            let named = net.named_params();
            let head: Vec<_> = named
                .into_iter()
                .filter(|(n, _)| n.starts_with("head."))
                .collect();
            fingerprint_of(&head)
        };
        let batch = random_batch(4, 224, 8);
        one_training_step(&mut net, &batch, &[0, 1, 0, 1], 0.05);
        assert_eq!(
            conv_before,
            fingerprint_of(&net.backbone.named_params()),
            "frozen convs are bit-identical after a step"
        );
        let head_after = {
            let named = net.named_params();
            let head: Vec<_> = named
                .into_iter()
                .filter(|(n, _)| n.starts_with("head."))
                .collect();
            fingerprint_of(&head)
        };
        assert_ne!(head_before, head_after, "head moved");
    }

    #[test]
    fn head_plus_top_conv_moves_only_the_top_conv_on_tiny() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 9).unwrap();
        net.set_policy(TrainablePolicy::HeadPlusTopConv);
        let grab = |net: &Network, name: &str| {
            let named = net.named_params();
            let one: Vec<_> = named.into_iter().filter(|(n, _)| n.starts_with(name)).collect();
            fingerprint_of(&one)
        };
        let bottom_before = grab(&net, "block1.");
        let top_before = grab(&net, "block2.");
        let batch = random_batch(4, 224, 10);
        one_training_step(&mut net, &batch, &[1, 0, 1, 0], 0.05);
        assert_eq!(bottom_before, grab(&net, "block1."), "bottom conv frozen");
        assert_ne!(top_before, grab(&net, "block2."), "top conv trained");
    }

    #[test]
    fn all_policy_moves_everything() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 11).unwrap();
        net.set_policy(TrainablePolicy::All);
        let before = fingerprint_of(&net.named_params());
        let batch = random_batch(2, 224, 12);
        one_training_step(&mut net, &batch, &[0, 1], 0.05);
        let named = net.named_params();
        for (name, p) in &named {
            assert!(p.trainable, "{name} should be trainable under ALL");
        }
        assert_ne!(before, fingerprint_of(&named));
    }

    #[test]
    fn policy_ranges_are_top_blocks_for_vgg_and_top_convs_for_alexnet() {
        assert_eq!(trainable_conv_range(BackboneKind::Vgg19), 9..=16);
        assert_eq!(trainable_conv_range(BackboneKind::Alexnet), 4..=5);
        assert_eq!(trainable_conv_range(BackboneKind::Tiny), 2..=2);
        // VGG19 blocks are 2/2/4/4/4 deep, so convs 9..=16 are exactly
        // blocks 4 and 5.
        let mut bb = Backbone::build(BackboneKind::Vgg19, 224, 13).unwrap();
        bb.set_conv_trainable(|i| {
            conv_trainable_under(TrainablePolicy::HeadPlusTopConv, BackboneKind::Vgg19, i)
        });
        let flags: Vec<bool> = bb
            .named_params()
            .iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .map(|(_, p)| p.trainable)
            .collect();
        assert_eq!(flags.len(), 16);
        assert!(flags[..8].iter().all(|&t| !t), "blocks 1-3 frozen");
        assert!(flags[8..].iter().all(|&t| t), "blocks 4-5 trainable");
    }

    #[test]
    fn policies_nest_as_trainable_sets() {
        for kind in [BackboneKind::Vgg19, BackboneKind::Alexnet, BackboneKind::Tiny] {
            let total = match kind {
                BackboneKind::Vgg19 => 16,
                BackboneKind::Alexnet => 5,
                BackboneKind::Tiny => 2,
            };
            for idx in 1..=total {
                let head_only = conv_trainable_under(TrainablePolicy::HeadOnly, kind, idx);
                let top = conv_trainable_under(TrainablePolicy::HeadPlusTopConv, kind, idx);
                let all = conv_trainable_under(TrainablePolicy::All, kind, idx);
                assert!(!head_only || top, "HEAD_ONLY ⊆ HEAD_PLUS_TOP_CONV");
                assert!(!top || all, "HEAD_PLUS_TOP_CONV ⊆ ALL");
            }
        }
    }

    #[test]
    fn load_pretrained_fills_backbone_and_leaves_head_fresh() {
        let donor = Network::build(BackboneKind::Tiny, 224, None, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.weights");
        let blocks = checkpoint::blocks_from_params(&donor.backbone.named_params());
        checkpoint::write_file(&path, "{}", &blocks).unwrap();

        let mut net = Network::build(BackboneKind::Tiny, 224, None, 21).unwrap();
        let head_before = {
            let named = net.named_params();
            let head: Vec<_> = named
                .into_iter()
                .filter(|(n, _)| n.starts_with("head."))
                .collect();
            fingerprint_of(&head)
        };
        assert_ne!(
            fingerprint_of(&donor.backbone.named_params()),
            fingerprint_of(&net.backbone.named_params()),
            "different seeds start apart"
        );
        load_pretrained(&mut net, &path).unwrap();
        assert_eq!(
            fingerprint_of(&donor.backbone.named_params()),
            fingerprint_of(&net.backbone.named_params()),
            "conv weights match the file"
        );
        let head_after = {
            let named = net.named_params();
            let head: Vec<_> = named
                .into_iter()
                .filter(|(n, _)| n.starts_with("head."))
                .collect();
            fingerprint_of(&head)
        };
        assert_eq!(head_before, head_after, "head untouched by weight loading");
    }

    #[test]
    fn truncated_absent_or_mismatched_weights_are_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let donor = Network::build(BackboneKind::Tiny, 224, None, 22).unwrap();
        let blocks = checkpoint::blocks_from_params(&donor.backbone.named_params());
        checkpoint::write_file(&path, "{}", &blocks).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 23).unwrap();
        assert!(matches!(
            load_pretrained(&mut net, &path),
            Err(BackboneError::WeightsIncompatible { .. })
        ));
        assert!(matches!(
            load_pretrained(&mut net, &dir.path().join("absent.bin")),
            Err(BackboneError::WeightsIncompatible { .. })
        ));
        // AlexNet-shaped blocks into a TINY backbone: first conv mismatches.
        let alex = Backbone::build(BackboneKind::Alexnet, 224, 24).unwrap();
        let alex_blocks = checkpoint::blocks_from_params(&alex.named_params());
        let path2 = dir.path().join("alex.weights");
        checkpoint::write_file(&path2, "{}", &alex_blocks).unwrap();
        match load_pretrained(&mut net, &path2) {
            Err(BackboneError::WeightsIncompatible { name, .. }) => {
                assert!(name.starts_with("block1.conv1"), "{name}");
            }
            other => panic!("expected WeightsIncompatible, got {other:?}"),
        }
    }

    #[test]
    fn tiny_overfits_sixteen_random_images() {
        let mut net = Network::build(BackboneKind::Tiny, 224, None, 30).unwrap();
        net.set_policy(TrainablePolicy::All);
        let batch = random_batch(16, 224, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let labels: Vec<usize> = (0..16).map(|_| rng.gen_range(0..2usize)).collect();
        let mut reached = None;
        for step in 0..200 {
            let logits = net.forward(&batch, true);
            let correct = logits
                .outer_iter()
                .zip(&labels)
                .filter(|(row, &l)| usize::from(row[1] > row[0]) == l)
                .count();
            if correct == 16 {
                reached = Some(step);
                break;
            }
            let out = softmax_cross_entropy(&logits, &labels, None);
            net.backward(&out.grad);
            let mut named = net.named_params_mut();
            let mut params: Vec<&mut Param> = named.iter_mut().map(|(_, p)| &mut **p).collect();
            sgd_step(&mut params, 0.05, 0.9);
        }
        let step = reached.expect("memorized 16/16 within 200 steps");
        assert!(step <= 200, "reached at step {step}");
    }
}
