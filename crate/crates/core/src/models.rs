//! The lightweight TCN classifier and its tagging-head localizer.
//!
//! Both models share one trunk: a pointwise input projection followed by
//! dilated residual blocks (`conv -> norm -> relu` twice, then a residual
//! add). The classifier pools the trunk output with attention and scores it
//! with a two-layer MLP. The localizer keeps that branch (so classifier
//! weights load into it unchanged) and adds a depthwise-separable tagging
//! head that emits four logits per frame.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ChannelStats, FEATURE_CHANNELS};
use crate::nn::{self, ConvSpec, NnError, NodeId, ParamId, ParamStore, SeqTensor, Tape};

/// Per-frame segment tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
    L = 3,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::O, Tag::B, Tag::I, Tag::L];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }
}

/// Cross-entropy weights for O, B, I, L.
pub const DEFAULT_TAG_WEIGHTS: [f64; 4] = [0.05, 0.30, 0.30, 0.35];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("expected {expected} input channels, got {got}")]
    InputChannels { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("model kind mismatch: expected {expected:?}, file holds {found:?}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("model file parameters do not match its architecture: {0}")]
    Architecture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub mlp_hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            in_channels: FEATURE_CHANNELS,
            hidden: 72,
            blocks: 4,
            dilations: vec![1, 2, 4, 8],
            kernel: 3,
            mlp_hidden: 32,
        }
    }
}

impl ClassifierConfig {
    fn dilation(&self, block: usize) -> usize {
        self.dilations.get(block).copied().unwrap_or(1 << block)
    }
}

/// Depthwise-separable tagging head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub layers: usize,
    pub kernel: usize,
    pub tags: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            kernel: 3,
            tags: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Localizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub trunk: ClassifierConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadConfig>,
}

impl ModelConfig {
    pub fn classifier(trunk: ClassifierConfig) -> Self {
        Self {
            kind: ModelKind::Classifier,
            trunk,
            head: None,
        }
    }

    pub fn localizer(trunk: ClassifierConfig, head: HeadConfig) -> Self {
        Self {
            kind: ModelKind::Localizer,
            trunk,
            head: Some(head),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::classifier(ClassifierConfig::default())
    }
}

/// Exact parameter element count for a configuration.
pub fn count_params(cfg: &ModelConfig) -> usize {
    trunk_param_count(&cfg.trunk) + cfg.head.as_ref().map_or(0, |h| head_param_count(&cfg.trunk, h))
}

pub fn trunk_param_count(c: &ClassifierConfig) -> usize {
    let h = c.hidden;
    let proj = c.in_channels * h + h;
    let block = 2 * (c.kernel * h * h + h + 2 * h);
    let pool = h + 1;
    let mlp = h * c.mlp_hidden + c.mlp_hidden + c.mlp_hidden + 1;
    proj + c.blocks * block + pool + mlp
}

pub fn head_param_count(c: &ClassifierConfig, head: &HeadConfig) -> usize {
    let h = c.hidden;
    let layer = (head.kernel * h + h) + (h * h + h) + 2 * h;
    head.layers * layer + h * head.tags + head.tags
}

#[derive(Debug, Clone)]
struct BlockIds {
    conv1: (ParamId, ParamId),
    norm1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct HeadLayerIds {
    dw: (ParamId, ParamId),
    pw: (ParamId, ParamId),
    norm: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Layout {
    proj: (ParamId, ParamId),
    blocks: Vec<BlockIds>,
    pool: (ParamId, ParamId),
    mlp1: (ParamId, ParamId),
    mlp2: (ParamId, ParamId),
    head: Vec<HeadLayerIds>,
    tag: Option<(ParamId, ParamId)>,
}

fn lookup(ps: &ParamStore, name: &str) -> Result<ParamId, ModelError> {
    ps.id(name)
        .ok_or_else(|| ModelError::Architecture(format!("missing parameter {name}")))
}

fn pair(ps: &ParamStore, prefix: &str, a: &str, b: &str) -> Result<(ParamId, ParamId), ModelError> {
    Ok((lookup(ps, &format!("{prefix}.{a}"))?, lookup(ps, &format!("{prefix}.{b}"))?))
}

impl Layout {
    fn resolve(cfg: &ModelConfig, ps: &ParamStore) -> Result<Self, ModelError> {
        let blocks = (0..cfg.trunk.blocks)
            .map(|i| {
                let p = format!("block{i}");
                Ok(BlockIds {
                    conv1: pair(ps, &format!("{p}.conv1"), "w", "b")?,
                    norm1: pair(ps, &format!("{p}.norm1"), "g", "b")?,
                    conv2: pair(ps, &format!("{p}.conv2"), "w", "b")?,
                    norm2: pair(ps, &format!("{p}.norm2"), "g", "b")?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        let (head, tag) = match &cfg.head {
            Some(h) => {
                let layers = (0..h.layers)
                    .map(|i| {
                        let p = format!("head{i}");
                        Ok(HeadLayerIds {
                            dw: pair(ps, &format!("{p}.dw"), "w", "b")?,
                            pw: pair(ps, &format!("{p}.pw"), "w", "b")?,
                            norm: pair(ps, &format!("{p}.norm"), "g", "b")?,
                        })
                    })
                    .collect::<Result<_, ModelError>>()?;
                (layers, Some(pair(ps, "tag", "w", "b")?))
            }
            None => (Vec::new(), None),
        };
        Ok(Self {
            proj: pair(ps, "proj", "w", "b")?,
            blocks,
            pool: pair(ps, "pool", "w", "b")?,
            mlp1: pair(ps, "mlp1", "w", "b")?,
            mlp2: pair(ps, "mlp2", "w", "b")?,
            head,
            tag,
        })
    }
}

fn init_conv(ps: &mut ParamStore, name: &str, kernel: usize, in_g: usize, out: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / ((kernel * in_g) as f64).sqrt();
    ps.uniform(&format!("{name}.w"), &[kernel, in_g, out], bound, rng);
    ps.uniform(&format!("{name}.b"), &[out], bound, rng);
}

fn init_norm(ps: &mut ParamStore, name: &str, c: usize) {
    ps.filled(&format!("{name}.g"), &[c], 1.0);
    ps.zeros(&format!("{name}.b"), &[c]);
}

fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let t = &cfg.trunk;
    let h = t.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    init_conv(&mut ps, "proj", 1, t.in_channels, h, &mut rng);
    for i in 0..t.blocks {
        init_conv(&mut ps, &format!("block{i}.conv1"), t.kernel, h, h, &mut rng);
        init_norm(&mut ps, &format!("block{i}.norm1"), h);
        init_conv(&mut ps, &format!("block{i}.conv2"), t.kernel, h, h, &mut rng);
        init_norm(&mut ps, &format!("block{i}.norm2"), h);
    }
    ps.uniform("pool.w", &[h], 1.0 / (h as f64).sqrt(), &mut rng);
    ps.zeros("pool.b", &[1]);
    init_conv(&mut ps, "mlp1", 1, h, t.mlp_hidden, &mut rng);
    init_conv(&mut ps, "mlp2", 1, t.mlp_hidden, 1, &mut rng);
    if let Some(head) = &cfg.head {
        for i in 0..head.layers {
            init_conv(&mut ps, &format!("head{i}.dw"), head.kernel, 1, h, &mut rng);
            init_conv(&mut ps, &format!("head{i}.pw"), 1, h, h, &mut rng);
            init_norm(&mut ps, &format!("head{i}.norm"), h);
        }
        init_conv(&mut ps, "tag", 1, h, head.tags, &mut rng);
    }
    ps
}

/// Either model; `config.kind` says which outputs are meaningful.
#[derive(Debug, Clone)]
pub struct TcnModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl TcnModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let params = init_params(&config, seed);
        let layout = Layout::resolve(&config, &params).expect("freshly built layout");
        Self {
            config,
            params,
            layout,
        }
    }

    pub fn classifier(trunk: ClassifierConfig, seed: u64) -> Self {
        Self::new(ModelConfig::classifier(trunk), seed)
    }

    pub fn localizer(trunk: ClassifierConfig, head: HeadConfig, seed: u64) -> Self {
        Self::new(ModelConfig::localizer(trunk, head), seed)
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against the architecture.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let reference = init_params(&config, 0);
        if reference.len() != params.len() {
            return Err(ModelError::Architecture(format!(
                "expected {} parameter arrays, found {}",
                reference.len(),
                params.len()
            )));
        }
        for ((n1, p1), (n2, p2)) in reference.iter().zip(params.iter()) {
            if n1 != n2 || p1.shape != p2.shape {
                return Err(ModelError::Architecture(format!(
                    "{n1}{:?} vs {n2}{:?}",
                    p1.shape, p2.shape
                )));
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.total_param_count()
    }

    fn check_input(&self, x: &SeqTensor) -> Result<(), ModelError> {
        if x.rows() == 0 {
            return Err(ModelError::EmptyInput);
        }
        if x.cols() != self.config.trunk.in_channels {
            return Err(ModelError::InputChannels {
                expected: self.config.trunk.in_channels,
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn masked(tape: &mut Tape, h: NodeId, mask: Option<&[bool]>) -> Result<NodeId, NnError> {
        match mask {
            Some(m) => tape.mask_rows(h, m),
            None => Ok(h),
        }
    }

    /// Records the shared trunk; output is `T x hidden`. With a mask, frames
    /// marked false behave exactly like the implicit zero padding.
    pub fn forward_trunk(
        &self,
        tape: &mut Tape,
        x: &SeqTensor,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, ModelError> {
        self.check_input(x)?;
        let ps = &self.params;
        let cfg = &self.config.trunk;
        let xi = tape.input(x.clone());
        let xi = Self::masked(tape, xi, mask)?;
        let mut h = tape.conv1d(ps, xi, self.layout.proj.0, self.layout.proj.1, ConvSpec::pointwise())?;
        for (i, blk) in self.layout.blocks.iter().enumerate() {
            let spec = ConvSpec::dense(cfg.kernel, cfg.dilation(i));
            let a = Self::masked(tape, h, mask)?;
            let a = tape.conv1d(ps, a, blk.conv1.0, blk.conv1.1, spec)?;
            let a = tape.layer_norm(ps, a, blk.norm1.0, blk.norm1.1)?;
            let a = tape.relu(a);
            let a = Self::masked(tape, a, mask)?;
            let a = tape.conv1d(ps, a, blk.conv2.0, blk.conv2.1, spec)?;
            let a = tape.layer_norm(ps, a, blk.norm2.0, blk.norm2.1)?;
            let a = tape.relu(a);
            h = tape.add(h, a)?;
        }
        Ok(h)
    }

    /// Classification logit node (`1 x 1`).
    pub fn forward_logit(
        &self,
        tape: &mut Tape,
        x: &SeqTensor,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, ModelError> {
        let h = self.forward_trunk(tape, x, mask)?;
        self.classification_branch(tape, h, mask)
    }

    /// Classification logit and, for localizers, tag logits from one trunk pass.
    pub fn forward_outputs(
        &self,
        tape: &mut Tape,
        x: &SeqTensor,
        mask: Option<&[bool]>,
    ) -> Result<(NodeId, Option<NodeId>), ModelError> {
        let h = self.forward_trunk(tape, x, mask)?;
        let logit = self.classification_branch(tape, h, mask)?;
        let tags = match self.layout.tag {
            Some(_) => Some(self.tagging_head(tape, h, mask)?),
            None => None,
        };
        Ok((logit, tags))
    }

    fn classification_branch(&self, tape: &mut Tape, h: NodeId, mask: Option<&[bool]>) -> Result<NodeId, ModelError> {
        let ps = &self.params;
        let pooled = tape.attention_pool(ps, h, self.layout.pool.0, self.layout.pool.1, mask)?;
        let z = tape.conv1d(ps, pooled, self.layout.mlp1.0, self.layout.mlp1.1, ConvSpec::pointwise())?;
        let z = tape.relu(z);
        Ok(tape.conv1d(ps, z, self.layout.mlp2.0, self.layout.mlp2.1, ConvSpec::pointwise())?)
    }

    /// Per-frame tag logits (`T x 4`). Only valid for localizers.
    pub fn forward_tag_logits(
        &self,
        tape: &mut Tape,
        x: &SeqTensor,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, ModelError> {
        if self.layout.tag.is_none() {
            return Err(ModelError::KindMismatch {
                expected: ModelKind::Localizer,
                found: self.config.kind,
            });
        }
        let h = self.forward_trunk(tape, x, mask)?;
        self.tagging_head(tape, h, mask)
    }

    fn tagging_head(&self, tape: &mut Tape, mut h: NodeId, mask: Option<&[bool]>) -> Result<NodeId, ModelError> {
        let tag = self.layout.tag.expect("localizer has a tag layer");
        let head = self.config.head.as_ref().expect("localizer has a head");
        let h_dim = self.config.trunk.hidden;
        let ps = &self.params;
        for layer in &self.layout.head {
            let a = Self::masked(tape, h, mask)?;
            let a = tape.conv1d(ps, a, layer.dw.0, layer.dw.1, ConvSpec::depthwise(head.kernel, 1, h_dim))?;
            let a = tape.conv1d(ps, a, layer.pw.0, layer.pw.1, ConvSpec::pointwise())?;
            let a = tape.layer_norm(ps, a, layer.norm.0, layer.norm.1)?;
            h = tape.relu(a);
        }
        Ok(tape.conv1d(ps, h, tag.0, tag.1, ConvSpec::pointwise())?)
    }

    /// Fake probability in `[0, 1]` for a normalized `T x 16` sequence.
    pub fn classify(&self, x: &SeqTensor) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let z = self.forward_logit(&mut tape, x, None)?;
        Ok(nn::sigmoid(tape.scalar(z)))
    }

    /// Same as [`classify`](Self::classify) for a padded batch row of which
    /// only the first `valid` frames are real.
    pub fn classify_masked(&self, x: &SeqTensor, valid: usize) -> Result<f64, ModelError> {
        let mask: Vec<bool> = (0..x.rows()).map(|t| t < valid).collect();
        let mut tape = Tape::new();
        let z = self.forward_logit(&mut tape, x, Some(&mask))?;
        Ok(nn::sigmoid(tape.scalar(z)))
    }

    /// Raw per-frame tag logits (`T x 4`).
    pub fn tag_logits(&self, x: &SeqTensor) -> Result<SeqTensor, ModelError> {
        let mut tape = Tape::new();
        let z = self.forward_tag_logits(&mut tape, x, None)?;
        Ok(tape.value(z).clone())
    }

    /// Per-frame tag probabilities; rows sum to one.
    pub fn tag_probs(&self, x: &SeqTensor) -> Result<SeqTensor, ModelError> {
        Ok(nn::softmax_rows(&self.tag_logits(x)?))
    }

    /// Copies trunk and classification-branch weights from another model.
    pub fn warm_start_from(&mut self, other: &TcnModel) -> Result<usize, ModelError> {
        if other.config.trunk != self.config.trunk {
            return Err(ModelError::Architecture("trunk configurations differ".into()));
        }
        Ok(self.params.load_matching(&other.params)?)
    }
}

/// `-[y ln s + (1 - y) ln(1 - s)]` with the logarithm clamped at 1e-12.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let ln = |p: f64| p.max(1e-12).ln();
    -(label * ln(score) + (1.0 - label) * ln(1.0 - score))
}

/// Class-weighted cross-entropy of per-frame probabilities, normalized by the
/// sum of the weights of the true tags.
pub fn weighted_ce_loss(probs: &SeqTensor, labels: &[Tag], weights: &[f64; 4]) -> f64 {
    assert_eq!(probs.rows(), labels.len(), "one label per frame");
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, tag) in labels.iter().enumerate() {
        let w = weights[tag.index()];
        num += w * -probs.get(t, tag.index()).max(1e-12).ln();
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// JSON header stored in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub architecture: ModelConfig,
    pub channel_stats: ChannelStats,
    pub fps: f64,
    pub tag_weights: [f64; 4],
    pub window: usize,
    pub stride: usize,
}

/// A model bundled with everything inference needs.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub header: ModelHeader,
    pub model: TcnModel,
}

impl SavedModel {
    pub fn write<W: Write>(&self, w: W) -> Result<(), ModelError> {
        Ok(nn::write_model(w, &self.header, self.model.params())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn read<R: Read>(r: R) -> Result<Self, ModelError> {
        let (header, params): (ModelHeader, ParamStore) = nn::read_model(r)?;
        if header.kind != header.architecture.kind {
            return Err(ModelError::Architecture("header kind disagrees with architecture".into()));
        }
        let model = TcnModel::from_params(header.architecture.clone(), params)?;
        Ok(Self { header, model })
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.header.kind == kind {
            Ok(())
        } else {
            Err(ModelError::KindMismatch {
                expected: kind,
                found: self.header.kind,
            })
        }
    }
}
