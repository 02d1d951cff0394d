//! Multi-column model assembly and per-column input variants.
//!
//! A column is a headless backbone fed one preprocessed view of the image;
//! column features are concatenated and classified by a shared fusion stack.
//! Parameter names extend the backbone scheme: "column{i}.block{j}.conv{k}.*"
//! and "fusion.dense{m}.*", all indices 1-based.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{
    self, Backbone, BackboneKind, TrainablePolicy,
};
use crate::config::{derive_seed, Config, ConfigError};
use crate::geometry::{
    self, bilinear_resize, normalize_pixels, pad_to_square, resize_to, GeometryError, ImagePlane,
    ResizeMode,
};
use crate::nn::{Dense, DenseStack, Param};
use crate::saliency::{self, SpectralParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum MulticolumnError {
    #[error("bad column configuration: {0}")]
    BadConfig(String),
    #[error("fusion classifier expects input width {got} but columns produce {expected}")]
    BadFusion { expected: usize, got: usize },
    #[error("no usable variant for column {column}")]
    NoVariant { column: usize },
    #[error("incompatible donor weights: {detail}")]
    WeightsIncompatible { detail: String },
}

/// One preprocessed view of an image, eligible as input to one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnVariant {
    Original,
    Padded,
    CenterCrop,
    RandomCrop1,
    RandomCrop2,
    RandomCrop3,
    SaliencySpectral,
    SaliencyFine,
}

impl ColumnVariant {
    pub fn token(self) -> &'static str {
        match self {
            ColumnVariant::Original => "ORIGINAL",
            ColumnVariant::Padded => "PADDED",
            ColumnVariant::CenterCrop => "CENTER_CROP",
            ColumnVariant::RandomCrop1 => "RANDOM_CROP_1",
            ColumnVariant::RandomCrop2 => "RANDOM_CROP_2",
            ColumnVariant::RandomCrop3 => "RANDOM_CROP_3",
            ColumnVariant::SaliencySpectral => "SALIENCY_SPECTRAL",
            ColumnVariant::SaliencyFine => "SALIENCY_FINE",
        }
    }

    pub fn parse(s: &str) -> Result<ColumnVariant, MulticolumnError> {
        match s {
            "ORIGINAL" => Ok(ColumnVariant::Original),
            "PADDED" => Ok(ColumnVariant::Padded),
            "CENTER_CROP" => Ok(ColumnVariant::CenterCrop),
            "RANDOM_CROP_1" => Ok(ColumnVariant::RandomCrop1),
            "RANDOM_CROP_2" => Ok(ColumnVariant::RandomCrop2),
            "RANDOM_CROP_3" => Ok(ColumnVariant::RandomCrop3),
            "SALIENCY_SPECTRAL" => Ok(ColumnVariant::SaliencySpectral),
            "SALIENCY_FINE" => Ok(ColumnVariant::SaliencyFine),
            other => Err(MulticolumnError::BadConfig(format!(
                "unknown variant token `{other}`"
            ))),
        }
    }

    /// Index into the random-crop set for the crop variants.
    fn crop_index(self) -> Option<usize> {
        match self {
            ColumnVariant::RandomCrop1 => Some(0),
            ColumnVariant::RandomCrop2 => Some(1),
            ColumnVariant::RandomCrop3 => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnConfig {
    pub menu: Vec<ColumnVariant>,
    pub kind: BackboneKind,
}

/// Full fusion-classifier width chain, input width included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionConfig {
    pub widths: Vec<usize>,
}

/// The canonical column menus: whole-image views, constrained random crops,
/// saliency maps.
pub fn standard_configs(
    n: usize,
    kind: BackboneKind,
    input_size: usize,
    fusion_tail: &[usize],
) -> Result<(Vec<ColumnConfig>, FusionConfig), MulticolumnError> {
    let menus: Vec<Vec<ColumnVariant>> = match n {
        1 => vec![vec![ColumnVariant::Original]],
        2 => vec![
            vec![
                ColumnVariant::Original,
                ColumnVariant::Padded,
                ColumnVariant::CenterCrop,
            ],
            vec![
                ColumnVariant::RandomCrop1,
                ColumnVariant::RandomCrop2,
                ColumnVariant::RandomCrop3,
            ],
        ],
        3 => vec![
            vec![
                ColumnVariant::Original,
                ColumnVariant::Padded,
                ColumnVariant::CenterCrop,
            ],
            vec![
                ColumnVariant::RandomCrop1,
                ColumnVariant::RandomCrop2,
                ColumnVariant::RandomCrop3,
            ],
            vec![ColumnVariant::SaliencySpectral, ColumnVariant::SaliencyFine],
        ],
        other => {
            return Err(MulticolumnError::BadConfig(format!(
                "column count must be 1, 2, or 3, got {other}"
            )))
        }
    };
    let feature = backbones::feature_len(kind, input_size)
        .map_err(|e| MulticolumnError::BadConfig(e.to_string()))?;
    let mut widths = Vec::with_capacity(fusion_tail.len() + 1);
    widths.push(feature * n);
    widths.extend_from_slice(fusion_tail);
    let configs = menus
        .into_iter()
        .map(|menu| ColumnConfig { menu, kind })
        .collect();
    Ok((configs, FusionConfig { widths }))
}

fn validate_configs(configs: &[ColumnConfig]) -> Result<(), MulticolumnError> {
    if configs.is_empty() {
        return Err(MulticolumnError::BadConfig("no columns".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (i, cfg) in configs.iter().enumerate() {
        if cfg.menu.is_empty() {
            return Err(MulticolumnError::BadConfig(format!(
                "column {} has an empty menu",
                i + 1
            )));
        }
        for v in &cfg.menu {
            if !seen.insert(*v) {
                return Err(MulticolumnError::BadConfig(format!(
                    "variant {} appears in two columns",
                    v.token()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
pub struct ColumnDescriptor {
    pub kind: String,
    pub menu: Vec<String>,
}

/// Everything needed to rebuild a model skeleton before loading weights.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
pub struct ModelDescriptor {
    pub columns: Vec<ColumnDescriptor>,
    pub fusion_widths: Vec<usize>,
    pub input_size: usize,
}

pub struct MultiColumnModel {
    pub configs: Vec<ColumnConfig>,
    pub columns: Vec<Backbone>,
    pub fusion: DenseStack,
    fusion_widths: Vec<usize>,
    pub input_size: usize,
    /// Which columns cached activations in the last training forward.
    col_cached: Vec<bool>,
}

impl MultiColumnModel {
    pub fn assemble(
        configs: &[ColumnConfig],
        fusion: &FusionConfig,
        input_size: usize,
        seed: u64,
    ) -> Result<MultiColumnModel, MulticolumnError> {
        validate_configs(configs)?;
        if fusion.widths.len() < 2 {
            return Err(MulticolumnError::BadConfig(
                "fusion needs an input width and at least one layer".into(),
            ));
        }
        if *fusion.widths.last().unwrap() != 2 {
            return Err(MulticolumnError::BadConfig(format!(
                "fusion must end in 2 classes, got {}",
                fusion.widths.last().unwrap()
            )));
        }
        let mut columns = Vec::with_capacity(configs.len());
        for (i, cfg) in configs.iter().enumerate() {
            let col_seed = derive_seed(seed, &["column", &(i + 1).to_string()]);
            let col = Backbone::build(cfg.kind, input_size, col_seed)
                .map_err(|e| MulticolumnError::BadConfig(e.to_string()))?;
            columns.push(col);
        }
        let expected: usize = columns.iter().map(|c| c.feature_len).sum();
        if fusion.widths[0] != expected {
            return Err(MulticolumnError::BadFusion {
                expected,
                got: fusion.widths[0],
            });
        }
        let layers: Vec<Dense> = fusion
            .widths
            .windows(2)
            .enumerate()
            .map(|(m, pair)| {
                let name = format!("fusion.dense{}", m + 1);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init", &name]));
                Dense::new(pair[0], pair[1], &mut rng)
            })
            .collect();
        let col_count = columns.len();
        Ok(MultiColumnModel {
            configs: configs.to_vec(),
            columns,
            fusion: DenseStack::from_layers(layers),
            fusion_widths: fusion.widths.clone(),
            input_size,
            col_cached: vec![false; col_count],
        })
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn network_label(&self) -> &'static str {
        match self.columns.len() {
            1 => "single column",
            2 => "double column",
            _ => "triple column",
        }
    }

    /// One tensor per column, each (B,3,S,S), same batch order.
    pub fn forward(&mut self, inputs: &[Array4<f32>], train: bool) -> Array2<f32> {
        assert_eq!(inputs.len(), self.columns.len(), "one input per column");
        let batch = inputs[0].dim().0;
        let mut features = Array2::<f32>::zeros((batch, self.fusion_widths[0]));
        let mut offset = 0usize;
        for (i, (col, input)) in self.columns.iter_mut().zip(inputs).enumerate() {
            assert_eq!(input.dim().0, batch, "batch sizes must agree");
            // Frozen columns skip activation caching: nothing will ask them
            // for gradients.
            let cache = train && col.has_trainable_params();
            let f = col.forward(input, cache);
            self.col_cached[i] = cache;
            features
                .slice_mut(ndarray::s![.., offset..offset + col.feature_len])
                .assign(&f);
            offset += col.feature_len;
        }
        self.fusion.forward(&features, train)
    }

    /// Backpropagate; returns per-column input gradients where available
    /// (None for columns skipped as fully frozen).
    pub fn backward(&mut self, grad_logits: &Array2<f32>) -> Vec<Option<Array4<f32>>> {
        let grad_features = self.fusion.backward(grad_logits);
        let mut out = Vec::with_capacity(self.columns.len());
        let mut offset = 0usize;
        for (i, col) in self.columns.iter_mut().enumerate() {
            let slice = grad_features
                .slice(ndarray::s![.., offset..offset + col.feature_len])
                .to_owned();
            offset += col.feature_len;
            if self.col_cached[i] {
                out.push(Some(col.backward(&slice)));
            } else {
                out.push(None);
            }
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            for (name, p) in col.named_params() {
                out.push((format!("column{}.{name}", i + 1), p));
            }
        }
        for (m, layer) in self.fusion.layers.iter().enumerate() {
            out.push((format!("fusion.dense{}.weight", m + 1), &layer.weight));
            out.push((format!("fusion.dense{}.bias", m + 1), &layer.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, col) in self.columns.iter_mut().enumerate() {
            for (name, p) in col.named_params_mut() {
                out.push((format!("column{}.{name}", i + 1), p));
            }
        }
        for (m, layer) in self.fusion.layers.iter_mut().enumerate() {
            out.push((format!("fusion.dense{}.weight", m + 1), &mut layer.weight));
            out.push((format!("fusion.dense{}.bias", m + 1), &mut layer.bias));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Freeze policy applied per column; the fusion classifier always trains.
    pub fn apply_policy(&mut self, policy: TrainablePolicy) {
        for col in &mut self.columns {
            let kind = col.kind;
            col.set_conv_trainable(|idx| backbones::conv_trainable_under(policy, kind, idx));
        }
        for layer in &mut self.fusion.layers {
            layer.weight.trainable = true;
            layer.bias.trainable = true;
        }
    }

    /// Copy column weights from donor models, in donor order, flattening
    /// multi-column donors. The fusion classifier keeps its fresh
    /// initialization and all optimizer state is cleared.
    pub fn warm_start(&mut self, donors: &[&MultiColumnModel]) -> Result<(), MulticolumnError> {
        let donor_cols: Vec<&Backbone> = donors.iter().flat_map(|d| d.columns.iter()).collect();
        if donor_cols.len() != self.columns.len() {
            return Err(MulticolumnError::WeightsIncompatible {
                detail: format!(
                    "donors provide {} columns, model has {}",
                    donor_cols.len(),
                    self.columns.len()
                ),
            });
        }
        for (i, (col, donor)) in self.columns.iter().zip(&donor_cols).enumerate() {
            if col.kind != donor.kind || col.input_size != donor.input_size {
                return Err(MulticolumnError::WeightsIncompatible {
                    detail: format!(
                        "column {} is {} at {}, donor is {} at {}",
                        i + 1,
                        col.kind.name(),
                        col.input_size,
                        donor.kind.name(),
                        donor.input_size
                    ),
                });
            }
        }
        for (col, donor) in self.columns.iter_mut().zip(&donor_cols) {
            let mut mine = col.named_params_mut();
            let theirs = donor.named_params();
            for ((_, p), (_, d)) in mine.iter_mut().zip(&theirs) {
                p.value = d.value.clone();
                p.velocity = None;
                p.grad = None;
            }
        }
        Ok(())
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            columns: self
                .configs
                .iter()
                .map(|c| ColumnDescriptor {
                    kind: c.kind.token().to_string(),
                    menu: c.menu.iter().map(|v| v.token().to_string()).collect(),
                })
                .collect(),
            fusion_widths: self.fusion_widths.clone(),
            input_size: self.input_size,
        }
    }

    /// Rebuild a model skeleton from a checkpoint's descriptor; weights come
    /// from the checkpoint blocks afterwards.
    pub fn from_descriptor(
        desc: &ModelDescriptor,
        seed: u64,
    ) -> Result<MultiColumnModel, MulticolumnError> {
        let configs: Vec<ColumnConfig> = desc
            .columns
            .iter()
            .map(|c| {
                let kind = BackboneKind::parse(&c.kind)
                    .map_err(|e| MulticolumnError::BadConfig(e.to_string()))?;
                let menu = c
                    .menu
                    .iter()
                    .map(|t| ColumnVariant::parse(t))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ColumnConfig { menu, kind })
            })
            .collect::<Result<Vec<_>, MulticolumnError>>()?;
        MultiColumnModel::assemble(
            &configs,
            &FusionConfig {
                widths: desc.fusion_widths.clone(),
            },
            desc.input_size,
            seed,
        )
    }
}

/// Preprocessing constants shared by every variant build.
#[derive(Debug, Clone)]
pub struct VariantParams {
    pub input_size: usize,
    pub resize_mode: ResizeMode,
    pub crop_count: usize,
    pub crop_min_sep: usize,
    pub crop_max_attempts: usize,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
    pub spectral: SpectralParams,
    pub fine_scales: Vec<usize>,
}

impl Default for VariantParams {
    fn default() -> Self {
        VariantParams {
            input_size: 224,
            resize_mode: ResizeMode::Stretch,
            crop_count: 3,
            crop_min_sep: 100,
            crop_max_attempts: 1000,
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
            spectral: SpectralParams::default(),
            fine_scales: vec![8, 16, 32],
        }
    }
}

impl VariantParams {
    pub fn from_config(cfg: &Config) -> Result<VariantParams, ConfigError> {
        let mode_str = cfg.get("resize_mode")?;
        let resize_mode =
            ResizeMode::parse(mode_str).ok_or_else(|| ConfigError::BadValue {
                key: "resize_mode".into(),
                value: mode_str.to_string(),
                wanted: "aspect or stretch".into(),
            })?;
        Ok(VariantParams {
            input_size: cfg.get_usize("input_size")?,
            resize_mode,
            crop_count: cfg.get_usize("crop_count")?,
            crop_min_sep: cfg.get_usize("crop_min_sep")?,
            crop_max_attempts: cfg.get_usize("crop_max_attempts")?,
            norm_mean: cfg.get_f32_triple("norm_mean")?,
            norm_std: cfg.get_f32_triple("norm_std")?,
            spectral: SpectralParams {
                working_width: cfg.get_usize("saliency_width")?,
                epsilon: cfg.get_f64("saliency_epsilon")?,
                sigma: cfg.get_f64("saliency_sigma")?,
            },
            fine_scales: cfg.get_usize_list("saliency_scales")?,
        })
    }
}

/// Upscale so the shorter side reaches `size`, preserving aspect ratio.
/// Images already large enough pass through untouched.
pub fn ensure_min_side(img: &ImagePlane, size: usize) -> ImagePlane {
    let short = img.width().min(img.height());
    if short >= size {
        return img.clone();
    }
    let scale = size as f64 / short as f64;
    let tw = ((img.width() as f64 * scale).round() as usize).max(size);
    let th = ((img.height() as f64 * scale).round() as usize).max(size);
    bilinear_resize(img, tw, th)
}

/// Resolve one variant of one image into a normalized (3,S,S) tensor.
/// Random-crop geometry is keyed by (seed, record id) only, so every crop
/// variant of a record is stable across epochs.
pub fn build_variant(
    img: &ImagePlane,
    variant: ColumnVariant,
    params: &VariantParams,
    record_id: &str,
    seed: u64,
) -> Result<Array3<f32>, GeometryError> {
    let s = params.input_size;
    let plane = match variant {
        ColumnVariant::Original => resize_to(img, s, s, params.resize_mode),
        ColumnVariant::Padded => {
            let (padded, _) = pad_to_square(img);
            bilinear_resize(&padded, s, s)
        }
        ColumnVariant::CenterCrop => {
            let side = img.width().min(img.height());
            let (cropped, _) = geometry::center_crop(img, side)?;
            bilinear_resize(&cropped, s, s)
        }
        ColumnVariant::RandomCrop1 | ColumnVariant::RandomCrop2 | ColumnVariant::RandomCrop3 => {
            let idx = variant.crop_index().expect("crop variant");
            let src = ensure_min_side(img, s);
            let crops = geometry::random_crops(
                &src,
                s,
                params.crop_count,
                params.crop_min_sep,
                derive_seed(seed, &["crops", record_id]),
                params.crop_max_attempts,
            )?;
            let spec = crops.get(idx).ok_or(GeometryError::InsufficientSeparation {
                needed: idx + 1,
                placed: crops.clone(),
            })?;
            geometry::apply_crop(&src, spec)?
        }
        ColumnVariant::SaliencySpectral => {
            let base = resize_to(img, s, s, params.resize_mode);
            saliency::spectral_residual(&base, &params.spectral).to_plane()
        }
        ColumnVariant::SaliencyFine => {
            let base = resize_to(img, s, s, params.resize_mode);
            saliency::fine_grained(&base, &params.fine_scales).to_plane()
        }
    };
    normalize_pixels(&plane, s, params.norm_mean, params.norm_std)
}

/// How training multiplexes a column's menu onto single forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectStrategy {
    /// Uniform draw per (record, column, epoch).
    Random,
    /// Always the first menu element, like evaluation.
    Canonical,
}

impl SelectStrategy {
    pub fn parse(s: &str) -> Option<SelectStrategy> {
        match s {
            "random" => Some(SelectStrategy::Random),
            "canonical" => Some(SelectStrategy::Canonical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Train { epoch: usize },
    Eval,
}

/// Pick a variant for one column and build its tensor, falling back
/// cyclically through the menu when construction fails (e.g. infeasible
/// random crops).
pub fn select_column_variant(
    menu: &[ColumnVariant],
    column_index: usize,
    mode: SelectMode,
    strategy: SelectStrategy,
    seed: u64,
    record_id: &str,
    mut build: impl FnMut(ColumnVariant) -> Result<Array3<f32>, GeometryError>,
) -> Result<(ColumnVariant, Array3<f32>), MulticolumnError> {
    let start = match (mode, strategy) {
        (SelectMode::Train { epoch }, SelectStrategy::Random) => {
            let sel_seed = derive_seed(
                seed,
                &[
                    "select",
                    record_id,
                    &(column_index + 1).to_string(),
                    &epoch.to_string(),
                ],
            );
            ChaCha8Rng::seed_from_u64(sel_seed).gen_range(0..menu.len())
        }
        _ => 0,
    };
    for off in 0..menu.len() {
        let v = menu[(start + off) % menu.len()];
        if let Ok(tensor) = build(v) {
            return Ok((v, tensor));
        }
    }
    Err(MulticolumnError::NoVariant {
        column: column_index + 1,
    })
}

/// One tensor per column for a record, per the mode's selection rule.
pub fn select_variants(
    record_id: &str,
    img: &ImagePlane,
    configs: &[ColumnConfig],
    mode: SelectMode,
    strategy: SelectStrategy,
    params: &VariantParams,
    seed: u64,
) -> Result<Vec<(ColumnVariant, Array3<f32>)>, MulticolumnError> {
    configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            select_column_variant(&cfg.menu, i, mode, strategy, seed, record_id, |v| {
                build_variant(img, v, params, record_id, seed)
            })
        })
        .collect()
}
